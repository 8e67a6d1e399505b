#include "msgv/motion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msgv {

MotionNoiseTrack sample_motion_noise(std::uint64_t seed, std::size_t num_anchors,
                                     std::size_t d_z, double anchor_spacing) {
  if (num_anchors < 2) {
    throw std::invalid_argument("sample_motion_noise: need at least 2 anchors, got " +
                                std::to_string(num_anchors));
  }
  if (d_z == 0) throw std::invalid_argument("sample_motion_noise: d_z must be positive");
  if (!(anchor_spacing > 0.0)) {
    throw std::invalid_argument("sample_motion_noise: anchor_spacing must be positive");
  }
  Rng rng(seed);
  MotionNoiseTrack track;
  track.anchors = Tensor::randn({num_anchors, d_z}, rng);
  track.anchor_spacing = anchor_spacing;
  track.seed = seed;
  return track;
}

MotionEncoder::MotionEncoder(const MotionEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.kernel % 2 == 0) {
    throw std::invalid_argument("MotionEncoder: kernel must be odd for symmetric padding");
  }
  if (cfg.conv_layers == 0 || cfg.waves == 0 || cfg.conv_channels == 0 || cfg.d_z == 0) {
    throw std::invalid_argument("MotionEncoder: all dimensions must be positive");
  }
  for (std::size_t l = 0; l < cfg.conv_layers; ++l) {
    const std::size_t cin = (l == 0) ? cfg.d_z : cfg.conv_channels;
    const double std = 1.0 / std::sqrt(static_cast<double>(cin * cfg.kernel));
    conv_w_.push_back(
        Tensor::randn({cfg.conv_channels, cin, cfg.kernel}, rng, std).set_requires_grad(true));
    conv_b_.push_back(Tensor::zeros({cfg.conv_channels}).set_requires_grad(true));
  }
  const double head_std = 0.5 / std::sqrt(static_cast<double>(cfg.conv_channels));
  head_w_ =
      Tensor::randn({3 * cfg.waves, cfg.conv_channels}, rng, head_std).set_requires_grad(true);
  head_b_ = Tensor::zeros({3 * cfg.waves}).set_requires_grad(true);
}

Tensor MotionEncoder::temporal_features(const MotionNoiseTrack& track) const {
  if (track.noise_dim() != cfg_.d_z) {
    throw std::invalid_argument("temporal_features: track d_z " +
                                std::to_string(track.noise_dim()) + " != configured " +
                                std::to_string(cfg_.d_z));
  }
  const std::size_t pad = cfg_.kernel / 2;
  Tensor h = transpose2(track.anchors);  // (d_z, A)
  for (std::size_t l = 0; l < conv_w_.size(); ++l) {
    if (l > 0) h = leaky_relu(h);
    h = conv1d(h, conv_w_[l], pad);
    h = add(h, reshape(conv_b_[l], {cfg_.conv_channels, 1}));
  }
  return h;  // (conv_channels, A)
}

WaveParams MotionEncoder::wave_params(const Tensor& features, std::size_t anchor_index) const {
  if (features.rank() != 2 || features.shape()[0] != cfg_.conv_channels) {
    throw std::invalid_argument("wave_params: features shape " + shape_str(features.shape()) +
                                " does not match encoder width");
  }
  if (anchor_index >= features.shape()[1]) {
    throw std::invalid_argument("wave_params: anchor index " + std::to_string(anchor_index) +
                                " out of range");
  }
  Tensor col = slice(features, 1, anchor_index, 1);  // (C, 1)
  Tensor raw = add(reshape(matmul(head_w_, col), {3 * cfg_.waves}), head_b_);
  const std::size_t F = cfg_.waves;
  WaveParams p;
  p.amplitudes = softplus(add_scalar(slice(raw, 0, 0, F), 1.0));
  p.angular_frequencies = softplus(add_scalar(slice(raw, 0, F, F), 1.0));
  p.phases = slice(raw, 0, 2 * F, F);
  return p;
}

Tensor MotionEncoder::motion_code_from_features(const Tensor& features, double anchor_spacing,
                                                double t) const {
  if (t < 0.0) throw std::invalid_argument("motion_code: t must be non-negative");
  if (!(anchor_spacing > 0.0)) {
    throw std::invalid_argument("motion_code: anchor_spacing must be positive");
  }
  const std::size_t A = features.shape()[1];
  // Interval containing t, clamped so times beyond the last anchor keep using
  // the final interval's interpolated endpoint.
  std::size_t i = static_cast<std::size_t>(std::max(0.0, std::floor(t / anchor_spacing)));
  i = std::min(i, A - 2);
  double alpha = (t - static_cast<double>(i) * anchor_spacing) / anchor_spacing;
  alpha = std::clamp(alpha, 0.0, 1.0);

  const WaveParams lo = wave_params(features, i);
  const WaveParams hi = wave_params(features, i + 1);
  auto lerp = [alpha](const Tensor& a, const Tensor& b) {
    return add(mul_scalar(a, 1.0 - alpha), mul_scalar(b, alpha));
  };
  Tensor amp = lerp(lo.amplitudes, hi.amplitudes);
  Tensor omega = lerp(lo.angular_frequencies, hi.angular_frequencies);
  Tensor phase = lerp(lo.phases, hi.phases);
  return mul(amp, sin_t(add(mul_scalar(omega, t), phase)));
}

Tensor MotionEncoder::motion_code(const MotionNoiseTrack& track, double t) const {
  return motion_code_from_features(temporal_features(track), track.anchor_spacing, t);
}

void MotionEncoder::collect_params(std::vector<NamedParam>& out, const std::string& prefix) {
  for (std::size_t l = 0; l < conv_w_.size(); ++l) {
    add_param(out, prefix + "conv" + std::to_string(l) + ".w", conv_w_[l]);
    add_param(out, prefix + "conv" + std::to_string(l) + ".b", conv_b_[l]);
  }
  add_param(out, prefix + "head.w", head_w_);
  add_param(out, prefix + "head.b", head_b_);
}

}  // namespace msgv
