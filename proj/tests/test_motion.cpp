#include <doctest.h>

#include <cmath>
#include <vector>

#include "msgv/motion.hpp"

using namespace msgv;

namespace {

MotionEncoderConfig small_cfg() {
  MotionEncoderConfig cfg;
  cfg.d_z = 6;
  cfg.waves = 5;
  cfg.conv_channels = 8;
  cfg.conv_layers = 2;
  cfg.kernel = 11;
  return cfg;
}

double l2_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

TEST_CASE("noise tracks regenerate bitwise from their seed") {
  auto a = sample_motion_noise(7, 4, 8, 16.0);
  auto b = sample_motion_noise(7, 4, 8, 16.0);
  REQUIRE(a.anchors.shape() == Shape{4, 8});
  for (std::size_t i = 0; i < a.anchors.size(); ++i) {
    CHECK(a.anchors.values()[i] == b.anchors.values()[i]);
  }
  CHECK_THROWS_AS(sample_motion_noise(7, 1, 8, 16.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_motion_noise(7, 4, 8, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(sample_motion_noise(7, 4, 8, -1.0), std::invalid_argument);
}

TEST_CASE("anchor noise is close to standard normal in bulk") {
  auto track = sample_motion_noise(11, 6250, 16, 16.0);  // 1e5 samples
  double sum = 0.0, sq = 0.0;
  for (double v : track.anchors.values()) {
    sum += v;
    sq += v * v;
  }
  const double n = double(track.anchors.size());
  const double mean = sum / n;
  CHECK(std::fabs(mean) < 0.02);
  CHECK(std::fabs(sq / n - mean * mean - 1.0) < 0.05);
}

TEST_CASE("identity-initialized single conv layer passes anchors through") {
  MotionEncoderConfig cfg;
  cfg.d_z = 4;
  cfg.conv_channels = 4;
  cfg.conv_layers = 1;
  cfg.waves = 3;
  Rng rng(5);
  MotionEncoder enc(cfg, rng);

  std::vector<NamedParam> params;
  enc.collect_params(params, "");
  for (auto& p : params) {
    auto v = p.tensor.values_mut();
    for (auto& x : v) x = 0.0;
    if (p.name == "conv0.w") {
      // center tap delta per channel
      for (std::size_t c = 0; c < 4; ++c) v[(c * 4 + c) * 11 + 5] = 1.0;
    }
  }

  auto track = sample_motion_noise(3, 7, 4, 16.0);
  Tensor feat = enc.temporal_features(track);
  REQUIRE(feat.shape() == Shape{4, 7});
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t a = 0; a < 7; ++a) {
      CHECK(feat.at({c, a}) == doctest::Approx(track.anchors.at({a, c})).epsilon(1e-12));
    }
}

TEST_CASE("averaging kernel maps constant input to constant interior output") {
  MotionEncoderConfig cfg;
  cfg.d_z = 1;
  cfg.conv_channels = 1;
  cfg.conv_layers = 1;
  cfg.waves = 2;
  Rng rng(5);
  MotionEncoder enc(cfg, rng);
  std::vector<NamedParam> params;
  enc.collect_params(params, "");
  for (auto& p : params) {
    auto v = p.tensor.values_mut();
    for (auto& x : v) x = (p.name == "conv0.w") ? 1.0 / 11.0 : 0.0;
  }

  MotionNoiseTrack track;
  track.anchors = Tensor::full({32, 1}, 0.7);
  track.anchor_spacing = 16.0;
  Tensor feat = enc.temporal_features(track);
  for (std::size_t a = 5; a < 27; ++a) {  // positions where the kernel fits fully
    CHECK(feat.at({0, a}) == doctest::Approx(0.7).epsilon(1e-12));
  }
  CHECK(feat.at({0, 0}) < 0.7);  // boundary sees zero padding
}

TEST_CASE("wave params: zeroed head gives the documented baseline") {
  Rng rng(9);
  MotionEncoder enc(small_cfg(), rng);
  std::vector<NamedParam> params;
  enc.collect_params(params, "");
  for (auto& p : params) {
    if (p.name.rfind("head.", 0) == 0) {
      auto v = p.tensor.values_mut();
      for (auto& x : v) x = 0.0;
    }
  }
  Tensor zero_features = Tensor::zeros({8, 3});
  WaveParams wp = enc.wave_params(zero_features, 1);
  const double base = std::log1p(std::exp(1.0));  // softplus(1)
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(wp.amplitudes.values()[f] == doctest::Approx(base).epsilon(1e-12));
    CHECK(wp.angular_frequencies.values()[f] == doctest::Approx(base).epsilon(1e-12));
    CHECK(wp.phases.values()[f] == 0.0);
  }
}

TEST_CASE("wave params stay positive and differ across anchors") {
  Rng rng(13);
  MotionEncoder enc(small_cfg(), rng);
  auto track = sample_motion_noise(21, 5, 6, 16.0);
  Tensor feat = enc.temporal_features(track);
  WaveParams a = enc.wave_params(feat, 0);
  WaveParams b = enc.wave_params(feat, 3);
  for (double v : a.amplitudes.values()) CHECK(v > 0.0);
  for (double v : a.angular_frequencies.values()) CHECK(v > 0.0);
  CHECK(l2_diff(a.amplitudes, b.amplitudes) > 1e-8);
}

TEST_CASE("near-zero amplitudes give a near-zero motion code") {
  Rng rng(17);
  MotionEncoder enc(small_cfg(), rng);
  std::vector<NamedParam> params;
  enc.collect_params(params, "");
  for (auto& p : params) {
    if (p.name == "head.b") {
      auto v = p.tensor.values_mut();
      for (std::size_t f = 0; f < 5; ++f) v[f] = -60.0;  // amplitude block
    }
    if (p.name == "head.w") {
      auto v = p.tensor.values_mut();
      for (auto& x : v) x = 0.0;
    }
  }
  auto track = sample_motion_noise(29, 4, 6, 16.0);
  Tensor v = enc.motion_code(track, 10.0);
  for (double x : v.values()) CHECK(std::fabs(x) < 1e-12);
}

TEST_CASE("motion code is continuous in t") {
  Rng rng(19);
  MotionEncoder enc(small_cfg(), rng);
  auto track = sample_motion_noise(31, 5, 6, 16.0);
  Tensor feat = enc.temporal_features(track);

  // finite differences shrink linearly with delta
  const double t0 = 13.2;
  auto code = [&](double t) { return enc.motion_code_from_features(feat, 16.0, t); };
  const double d1 = l2_diff(code(t0 + 1e-3), code(t0));
  const double d2 = l2_diff(code(t0 + 1e-4), code(t0));
  CHECK(d1 > 0.0);
  CHECK(d2 < d1 * 0.3);  // ~10x smaller step -> ~10x smaller difference

  // stepping across an anchor is seamless
  const double s = 16.0;
  CHECK(l2_diff(code(s), code(s - 1e-12)) < 1e-9);
  CHECK(l2_diff(code(s), code(s + 1e-12)) < 1e-9);

  // beyond the last anchor the params clamp but evaluation still works
  for (double x : code(100.0).values()) CHECK(std::isfinite(x));
  CHECK_THROWS_AS(code(-1.0), std::invalid_argument);
}

TEST_CASE("different seeds produce different codes") {
  Rng rng(23);
  MotionEncoder enc(small_cfg(), rng);
  auto a = sample_motion_noise(1, 5, 6, 16.0);
  auto b = sample_motion_noise(2, 5, 6, 16.0);
  CHECK(l2_diff(enc.motion_code(a, 7.0), enc.motion_code(b, 7.0)) > 1e-6);
}

TEST_CASE("motion pipeline is differentiable end to end") {
  Rng rng(27);
  MotionEncoder enc(small_cfg(), rng);
  auto track = sample_motion_noise(33, 4, 6, 16.0);
  Rng wrng(101);
  Tensor sink = Tensor::randn({5}, wrng);

  // through the anchors (data path)
  const double err_x = grad_check(
      [&](const Tensor& anchors) {
        MotionNoiseTrack t2{anchors, track.anchor_spacing, track.seed};
        return sum_all(mul(enc.motion_code(t2, 9.3), sink));
      },
      track.anchors);
  CHECK(err_x < 1e-4);

  // through the conv kernel and wave head (parameter path)
  std::vector<NamedParam> params;
  enc.collect_params(params, "");
  auto forward = [&]() { return sum_all(mul(enc.motion_code(track, 9.3), sink)); };
  for (auto& p : params) {
    CAPTURE(p.name);
    CHECK(param_grad_check(forward, p.tensor) < 1e-4);
  }
}
