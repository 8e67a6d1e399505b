#pragma once

#include <array>
#include <cstdint>

namespace msgv {

// Deterministic xoshiro256++ generator with Box-Muller normals.
// State is four u64 words so checkpoints can round-trip it exactly;
// std::normal_distribution is implementation-defined and is avoided on purpose.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  // Uniform in [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller (one value per draw, no cached state).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Derives an independent child stream; advances this generator once.
  Rng split();

  std::array<std::uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<std::uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace msgv
