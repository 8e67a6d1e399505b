#pragma once

#include <cstdint>
#include <vector>

#include "msgv/params.hpp"
#include "msgv/rng.hpp"
#include "msgv/tensor.hpp"

namespace msgv {

// A sequence of standard-normal noise anchors laid out every `anchor_spacing`
// time units. The anchors are data, not parameters: regenerating from the
// same (seed, A, d_z) is bitwise reproducible.
struct MotionNoiseTrack {
  Tensor anchors;  // (A, d_z)
  double anchor_spacing = 16.0;
  std::uint64_t seed = 0;

  std::size_t num_anchors() const { return anchors.shape()[0]; }
  std::size_t noise_dim() const { return anchors.shape()[1]; }
  double duration() const {
    return anchor_spacing * static_cast<double>(num_anchors() - 1);
  }
};

MotionNoiseTrack sample_motion_noise(std::uint64_t seed, std::size_t num_anchors,
                                     std::size_t d_z, double anchor_spacing);

// Per-anchor sinusoid bank: F waves, each with amplitude, angular frequency
// and phase. Amplitudes and frequencies go through softplus(x+1), so they are
// strictly positive and start near softplus(1) ~ 1.313 for a zero head.
struct WaveParams {
  Tensor amplitudes;           // (F)
  Tensor angular_frequencies;  // (F)
  Tensor phases;               // (F)
};

struct MotionEncoderConfig {
  std::size_t d_z = 16;
  std::size_t waves = 16;  // F; the motion code dimension equals this
  std::size_t conv_channels = 16;
  std::size_t conv_layers = 2;
  std::size_t kernel = 11;  // odd, symmetric zero padding keeps the anchor count
};

// Turns a noise track into a continuous-time motion code v_t: a temporal conv
// stack mixes anchors with their neighbours, an affine head predicts a wave
// bank per anchor, and evaluation at time t linearly interpolates the bank
// between the two surrounding anchors before sampling the sinusoids.
class MotionEncoder {
 public:
  MotionEncoder(const MotionEncoderConfig& cfg, Rng& rng);

  const MotionEncoderConfig& config() const { return cfg_; }

  // (conv_channels, A); column i is the feature of anchor i.
  Tensor temporal_features(const MotionNoiseTrack& track) const;

  // Wave bank predicted at one anchor.
  WaveParams wave_params(const Tensor& features, std::size_t anchor_index) const;

  // v_t of length `waves`; recomputes features (convenience path).
  Tensor motion_code(const MotionNoiseTrack& track, double t) const;

  // Same, but against precomputed features so per-clip work is shared.
  Tensor motion_code_from_features(const Tensor& features, double anchor_spacing,
                                   double t) const;

  void collect_params(std::vector<NamedParam>& out, const std::string& prefix);

 private:
  MotionEncoderConfig cfg_;
  std::vector<Tensor> conv_w_;  // (C_out, C_in, kernel)
  std::vector<Tensor> conv_b_;  // (C_out)
  Tensor head_w_;               // (3F, conv_channels)
  Tensor head_b_;               // (3F)
};

}  // namespace msgv
