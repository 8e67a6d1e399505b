#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "msgv/networks.hpp"

using namespace msgv;

namespace {

struct TinyConfigs {
  GeneratorConfig gen;
  StyleConfig style;
  MotionEncoderConfig motion;
};

TinyConfigs tiny_configs() {
  TinyConfigs c;
  c.gen.resolution = 8;
  c.gen.const_channels = 6;
  c.gen.channels = {8};
  c.style.d_c = 8;
  c.style.mapping_layers = 2;
  c.style.d_v = 4;
  c.style.motion_mlp_width = 12;
  c.style.K = 2;
  c.style.d_m = 6;
  c.style.d_h = 8;
  c.style.R = 1;
  c.motion.d_z = 4;
  c.motion.waves = 4;
  c.motion.conv_channels = 5;
  c.motion.conv_layers = 1;
  c.motion.kernel = 5;
  return c;
}

DiscriminatorConfig tiny_disc() {
  DiscriminatorConfig dc;
  dc.resolution = 8;
  dc.channels = {6};
  dc.items = 3;
  dc.global_dim = 6;
  dc.time_freqs = 2;
  return dc;
}

double l2_diff(const Tensor& a, const Tensor& b) {
  auto va = a.values();
  auto vb = b.values();
  double sq = 0.0;
  for (std::size_t i = 0; i < va.size(); ++i) {
    double d = va[i] - vb[i];
    sq += d * d;
  }
  return std::sqrt(sq);
}

}  // namespace

TEST_CASE("default-size generation: shapes, determinism, track sensitivity, real-valued t") {
  Rng rng(1);
  GeneratorConfig gc;  // 32x32, three blocks
  StyleConfig sc;
  MotionEncoderConfig mc;
  Generator gen(gc, sc, mc, rng);
  Tensor z = Tensor::randn({sc.d_c}, rng);
  MotionNoiseTrack track_a = sample_motion_noise(9, 5, mc.d_z, 16.0);
  MotionNoiseTrack track_b = sample_motion_noise(10, 5, mc.d_z, 16.0);

  GenerateResult r1 = gen.generate_clip(z, track_a, {2.5});  // non-integer time works
  GenerateResult r2 = gen.generate_clip(z, track_a, {2.5});
  REQUIRE(r1.frames.size() == 1);
  CHECK(r1.frames[0].shape() == Shape{3, 32, 32});
  for (double v : r1.frames[0].values()) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  // same inputs -> bitwise-identical frame
  auto va = r1.frames[0].values();
  auto vb = r2.frames[0].values();
  bool identical = true;
  for (std::size_t i = 0; i < va.size(); ++i)
    if (va[i] != vb[i]) identical = false;
  CHECK(identical);

  // all six modulated layers recorded, logits sized (c_out, K)
  REQUIRE(r1.records.size() == 1);
  REQUIRE(r1.records[0].size() == 6);
  CHECK(r1.records[0][0].logits.shape() == Shape{128, sc.K});
  CHECK(r1.records[0][5].logits.shape() == Shape{64, sc.K});
  REQUIRE(r1.last_features.size() == 1);
  CHECK(r1.last_features[0].shape() == Shape{64, 32, 32});

  // a different motion track produces a different frame
  GenerateResult r3 = gen.generate_clip(z, track_b, {2.5});
  CHECK(l2_diff(r1.frames[0], r3.frames[0]) > 1e-6);
}

TEST_CASE("generator constructor validates resolution, channels and code width") {
  Rng rng(2);
  auto c = tiny_configs();
  {
    auto bad = c;
    bad.motion.waves = 5;  // != style.d_v
    CHECK_THROWS_AS(Generator(bad.gen, bad.style, bad.motion, rng), std::invalid_argument);
  }
  {
    auto bad = c;
    bad.gen.channels = {8, 8};  // 8x8 target needs exactly one block
    CHECK_THROWS_AS(Generator(bad.gen, bad.style, bad.motion, rng), std::invalid_argument);
  }
  {
    auto bad = c;
    bad.gen.resolution = 12;
    CHECK_THROWS_AS(Generator(bad.gen, bad.style, bad.motion, rng), std::invalid_argument);
  }
}

TEST_CASE("generate_clip rejects empty or non-increasing time lists") {
  Rng rng(3);
  auto c = tiny_configs();
  Generator gen(c.gen, c.style, c.motion, rng);
  Tensor z = Tensor::randn({c.style.d_c}, rng);
  MotionNoiseTrack track = sample_motion_noise(4, 3, c.motion.d_z, 8.0);
  CHECK_THROWS_AS(gen.generate_clip(z, track, {}), std::invalid_argument);
  CHECK_THROWS_AS(gen.generate_clip(z, track, {1.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(gen.generate_clip(z, track, {2.0, 1.0}), std::invalid_argument);
}

TEST_CASE("generator output is differentiable in the content latent") {
  Rng rng(4);
  auto c = tiny_configs();
  Generator gen(c.gen, c.style, c.motion, rng);
  MotionNoiseTrack track = sample_motion_noise(4, 3, c.motion.d_z, 8.0);
  Tensor z0 = Tensor::randn({c.style.d_c}, rng);
  auto f = [&](const Tensor& z) {
    return sum_all(gen.generate_clip(z, track, {1.5}).frames[0]);
  };
  CHECK(grad_check(f, z0, 1e-4) < 1e-4);
}

TEST_CASE("frame differences produce 2N-1 items with absolute deltas at midpoints") {
  auto scalar_frame = [](double v) { return Tensor::full({1, 1, 1}, v); };
  std::vector<Tensor> frames = {scalar_frame(0.2), scalar_frame(0.5), scalar_frame(0.1)};
  std::vector<double> times = {0.0, 2.0, 3.0};
  ItemSequence seq = frame_differences(frames, times);
  REQUIRE(seq.items.size() == 5);
  REQUIRE(seq.times.size() == 5);
  CHECK(seq.items[3].item() == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(seq.items[4].item() == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(seq.times[3] == 1.0);
  CHECK(seq.times[4] == 2.5);
  // original frames pass through untouched
  CHECK(seq.items[0].item() == 0.2);
  CHECK(seq.items[2].item() == 0.1);
}

TEST_CASE("frame differences of a constant clip are zero and never negative") {
  Rng rng(5);
  Tensor f = Tensor::randn({3, 4, 4}, rng);
  ItemSequence seq = frame_differences({f, f, f}, {0.0, 1.0, 2.0});
  for (std::size_t i = 3; i < 5; ++i)
    for (double v : seq.items[i].values()) CHECK(v == 0.0);

  Tensor g = Tensor::randn({3, 4, 4}, rng);
  ItemSequence seq2 = frame_differences({f, g}, {0.0, 1.0});
  for (double v : seq2.items[2].values()) CHECK(v >= 0.0);
}

TEST_CASE("frame differences need at least two frames and matching times") {
  Tensor f = Tensor::full({1, 2, 2}, 0.5);
  CHECK_THROWS_AS(frame_differences({f}, {0.0}), std::invalid_argument);
  CHECK_THROWS_AS(frame_differences({f, f}, {0.0}), std::invalid_argument);
}

TEST_CASE("discriminator logit is zero when the global head is zeroed") {
  Rng rng(6);
  Discriminator disc(tiny_disc(), rng);
  std::vector<NamedParam> params;
  disc.collect_params(params, "");
  for (auto& p : params) {
    if (p.name == "glob.w" || p.name == "glob.b") {
      for (auto& v : p.tensor.values_mut()) v = 0.0;
    }
  }
  std::vector<Tensor> items = {Tensor::randn({3, 8, 8}, rng), Tensor::randn({3, 8, 8}, rng),
                               Tensor::randn({3, 8, 8}, rng)};
  CHECK(disc.discriminate(items, {0.0, 1.0, 2.0}).item() == 0.0);
}

TEST_CASE("discriminator is sensitive to item order through the time encoding") {
  Rng rng(7);
  Discriminator disc(tiny_disc(), rng);
  std::vector<Tensor> items = {Tensor::randn({3, 8, 8}, rng), Tensor::randn({3, 8, 8}, rng),
                               Tensor::randn({3, 8, 8}, rng)};
  double base = disc.discriminate(items, {0.0, 3.0, 4.5}).item();
  double swapped = disc.discriminate({items[1], items[0], items[2]}, {0.0, 3.0, 4.5}).item();
  CHECK(std::fabs(base - swapped) > 1e-9);
}

TEST_CASE("discriminator rejects arity and count mismatches") {
  Rng rng(8);
  Discriminator disc(tiny_disc(), rng);
  std::vector<Tensor> two = {Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8})};
  CHECK_THROWS_AS(disc.discriminate(two, {0.0, 1.0}), std::invalid_argument);
  std::vector<Tensor> three = {Tensor::zeros({3, 8, 8}), Tensor::zeros({3, 8, 8}),
                               Tensor::zeros({3, 8, 8})};
  CHECK_THROWS_AS(disc.discriminate(three, {0.0, 1.0}), std::invalid_argument);
  CHECK_THROWS_AS(Discriminator([] {
                    auto dc = tiny_disc();
                    dc.channels = {6, 6};  // 8x8 input admits a single stage
                    return dc;
                  }(),
                  rng),
                  std::invalid_argument);
}

TEST_CASE("discriminator pools deeper inputs down to the fuse resolution") {
  Rng rng(9);
  DiscriminatorConfig dc;
  dc.resolution = 32;
  dc.channels = {4, 5, 6};
  dc.items = 3;
  dc.global_dim = 6;
  dc.time_freqs = 2;
  Discriminator disc(dc, rng);
  std::vector<Tensor> items = {Tensor::randn({3, 32, 32}, rng, 0.5),
                               Tensor::randn({3, 32, 32}, rng, 0.5),
                               Tensor::randn({3, 32, 32}, rng, 0.5)};
  double logit = disc.discriminate(items, {0.0, 2.0, 7.0}).item();
  CHECK(std::isfinite(logit));
}

TEST_CASE("encoder weights are shared across items: one parameter set, listed once") {
  Rng rng(10);
  Discriminator disc(tiny_disc(), rng);
  std::vector<NamedParam> params;
  disc.collect_params(params, "");
  int enc0_count = 0;
  for (const auto& p : params)
    if (p.name == "enc0.w") ++enc0_count;
  CHECK(enc0_count == 1);
  // one stage + fuse + glob + time, weights and biases each
  CHECK(params.size() == 8);
}

TEST_CASE("discriminator gradients check out against finite differences") {
  Rng rng(11);
  Discriminator disc(tiny_disc(), rng);
  std::vector<Tensor> fixed = {Tensor::randn({3, 8, 8}, rng, 0.4),
                               Tensor::randn({3, 8, 8}, rng, 0.4)};
  Tensor x0 = Tensor::randn({3, 8, 8}, rng, 0.4);
  std::vector<double> times = {0.0, 1.0, 2.5};

  auto through_x = [&](const Tensor& x) {
    return disc.discriminate({x, fixed[0], fixed[1]}, times);
  };
  CHECK(grad_check(through_x, x0, 1e-4) < 1e-4);

  std::vector<NamedParam> params;
  disc.collect_params(params, "");
  auto forward = [&]() { return disc.discriminate({x0, fixed[0], fixed[1]}, times); };
  for (auto& p : params) {
    INFO("parameter ", p.name);
    CHECK(param_grad_check(forward, p.tensor, 1e-4) < 1e-4);
  }
}
