#include "msgv/networks.hpp"

#include <cmath>
#include <stdexcept>

namespace msgv {

namespace {

bool power_of_two(std::size_t v) { return v && (v & (v - 1)) == 0; }

std::size_t block_count(std::size_t resolution) {
  if (resolution < 8 || !power_of_two(resolution)) {
    throw std::invalid_argument("resolution must be a power of two >= 8, got " +
                                std::to_string(resolution));
  }
  std::size_t b = 0;
  for (std::size_t r = 4; r < resolution; r *= 2) ++b;
  return b;
}

}  // namespace

Generator::Generator(const GeneratorConfig& cfg, const StyleConfig& style_cfg,
                     const MotionEncoderConfig& motion_cfg, Rng& rng)
    : cfg_(cfg), motion_(motion_cfg, rng), styles_(style_cfg, rng) {
  if (style_cfg.d_v != motion_cfg.waves) {
    throw std::invalid_argument("Generator: style d_v " + std::to_string(style_cfg.d_v) +
                                " != motion code width " + std::to_string(motion_cfg.waves));
  }
  const std::size_t blocks = block_count(cfg.resolution);
  if (cfg.channels.size() != blocks) {
    throw std::invalid_argument("Generator: resolution " + std::to_string(cfg.resolution) +
                                " needs " + std::to_string(blocks) +
                                " channel entries, got " + std::to_string(cfg.channels.size()));
  }
  constant_ = Tensor::randn({cfg.const_channels, 4, 4}, rng).set_requires_grad(true);
  std::size_t in_ch = cfg.const_channels + style_cfg.d_v;
  for (std::size_t b = 0; b < blocks; ++b) {
    const std::size_t out_ch = cfg.channels[b];
    convs_.emplace_back(styles_, LayerShape{out_ch, in_ch, 3, 3}, rng);
    convs_.emplace_back(styles_, LayerShape{out_ch, out_ch, 3, 3}, rng);
    in_ch = out_ch;
  }
  rgb_w_ = Tensor::randn({3, in_ch, 1, 1}, rng, 1.0 / std::sqrt(double(in_ch)))
               .set_requires_grad(true);
  rgb_b_ = Tensor::zeros({3}).set_requires_grad(true);
}

GenerateResult Generator::generate_clip(const Tensor& z_c, const MotionNoiseTrack& track,
                                        const std::vector<double>& times) const {
  if (times.empty()) throw std::invalid_argument("generate_clip: no times given");
  for (std::size_t i = 1; i < times.size(); ++i) {
    if (!(times[i] > times[i - 1])) {
      throw std::invalid_argument("generate_clip: times must be strictly increasing");
    }
  }
  GenerateResult result;
  result.times = times;

  Tensor w = styles_.map_content(z_c);
  Tensor features = motion_.temporal_features(track);

  // Content styles are time-agnostic: compute once per clip.
  std::vector<Tensor> s;
  s.reserve(convs_.size());
  for (const auto& layer : convs_) s.push_back(styles_.affine_style(w, layer.layer_id()));

  const std::size_t d_v = styles_.config().d_v;
  for (double t : times) {
    Tensor v = motion_.motion_code_from_features(features, track.anchor_spacing, t);
    Tensor m = styles_.motion_vectors(w, v);

    Tensor x = concat({constant_, broadcast_to(reshape(v, {d_v, 1, 1}), {d_v, 4, 4})}, 0);
    std::vector<AttentionRecord> frame_records;
    frame_records.reserve(convs_.size());
    for (std::size_t li = 0; li < convs_.size(); ++li) {
      if (li % 2 == 0) x = nearest_upsample2(x);
      const std::size_t id = convs_[li].layer_id();
      Tensor rows = styles_.modulation_rows(styles_.hyper_styles(m, id), id);
      ModConvOut out = convs_[li].forward(x, s[li], rows, cfg_.strategy, cfg_.demod);
      x = out.y;
      frame_records.push_back(std::move(out.att));
    }
    result.last_features.push_back(x);
    result.records.push_back(std::move(frame_records));
    Tensor rgb = add(conv2d(x, rgb_w_, 0), reshape(rgb_b_, {3, 1, 1}));
    result.frames.push_back(tanh_t(rgb));
  }
  return result;
}

void Generator::collect_params(std::vector<NamedParam>& out, const std::string& prefix) {
  add_param(out, prefix + "constant", constant_);
  motion_.collect_params(out, prefix + "motion.");
  styles_.collect_params(out, prefix + "styles.");
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    convs_[i].collect_params(out, prefix + "conv" + std::to_string(i) + ".");
  }
  add_param(out, prefix + "rgb.w", rgb_w_);
  add_param(out, prefix + "rgb.b", rgb_b_);
}

ItemSequence frame_differences(const std::vector<Tensor>& frames,
                               const std::vector<double>& times) {
  if (frames.size() < 2) {
    throw std::invalid_argument("frame_differences: need at least 2 frames, got " +
                                std::to_string(frames.size()));
  }
  if (frames.size() != times.size()) {
    throw std::invalid_argument("frame_differences: frame/time count mismatch");
  }
  ItemSequence seq;
  seq.items = frames;
  seq.times = times;
  for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
    seq.items.push_back(abs_t(sub(frames[i + 1], frames[i])));
    seq.times.push_back(0.5 * (times[i] + times[i + 1]));
  }
  return seq;
}

Discriminator::Discriminator(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.items == 0) throw std::invalid_argument("Discriminator: need at least one item");
  std::size_t halvings = 0;
  for (std::size_t r = cfg.resolution; r > 8; r /= 2) {
    if (r % 2) throw std::invalid_argument("Discriminator: resolution must reach 8x8");
    ++halvings;
  }
  if (cfg.resolution < 8 || !power_of_two(cfg.resolution)) {
    throw std::invalid_argument("Discriminator: resolution must be a power of two >= 8");
  }
  if (cfg.channels.size() != halvings + 1) {
    throw std::invalid_argument("Discriminator: resolution " + std::to_string(cfg.resolution) +
                                " needs " + std::to_string(halvings + 1) +
                                " channel entries, got " + std::to_string(cfg.channels.size()));
  }
  std::size_t in_ch = 3;
  for (std::size_t c : cfg.channels) {
    const double std = 1.0 / std::sqrt(double(in_ch * 9));
    enc_w_.push_back(Tensor::randn({c, in_ch, 3, 3}, rng, std).set_requires_grad(true));
    enc_b_.push_back(Tensor::zeros({c}).set_requires_grad(true));
    in_ch = c;
  }
  const std::size_t fuse_in = cfg.items * cfg.channels.back();
  const std::size_t fuse_c = cfg.channels.back();
  fuse_w_ = Tensor::randn({fuse_c, fuse_in, 3, 3}, rng, 1.0 / std::sqrt(double(fuse_in * 9)))
                .set_requires_grad(true);
  fuse_b_ = Tensor::zeros({fuse_c}).set_requires_grad(true);
  glob_w_ = Tensor::randn({cfg.global_dim, fuse_c * 64}, rng,
                          1.0 / std::sqrt(double(fuse_c * 64)))
                .set_requires_grad(true);
  glob_b_ = Tensor::zeros({cfg.global_dim}).set_requires_grad(true);
  time_w_ = Tensor::randn({cfg.global_dim, 2 * cfg.time_freqs}, rng,
                          1.0 / std::sqrt(double(2 * cfg.time_freqs)))
                .set_requires_grad(true);
  time_b_ = Tensor::zeros({cfg.global_dim}).set_requires_grad(true);
}

Tensor Discriminator::encode_item(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t l = 0; l < enc_w_.size(); ++l) {
    h = leaky_relu(
        add(conv2d(h, enc_w_[l], 1), reshape(enc_b_[l], {enc_w_[l].shape()[0], 1, 1})));
    if (l + 1 < enc_w_.size()) h = avg_pool2(h);
  }
  return h;
}

Tensor Discriminator::discriminate(const std::vector<Tensor>& items,
                                   const std::vector<double>& times) const {
  if (items.size() != times.size()) {
    throw std::invalid_argument("discriminate: " + std::to_string(items.size()) +
                                " items vs " + std::to_string(times.size()) + " times");
  }
  if (items.size() != cfg_.items) {
    throw std::invalid_argument("discriminate: configured for " + std::to_string(cfg_.items) +
                                " items, got " + std::to_string(items.size()));
  }
  std::vector<Tensor> encoded;
  encoded.reserve(items.size());
  for (const auto& item : items) encoded.push_back(encode_item(item));
  Tensor h = concat(encoded, 0);  // (items*c, 8, 8)
  h = leaky_relu(add(conv2d(h, fuse_w_, 1), reshape(fuse_b_, {fuse_w_.shape()[0], 1, 1})));
  Tensor g = add(reshape(matmul(glob_w_, reshape(h, {h.size(), 1})), {cfg_.global_dim}),
                 glob_b_);

  // Sum of projected sinusoid encodings of (t_i - t_1).
  Tensor e = reshape(time_b_, {cfg_.global_dim});
  for (double t : times) {
    const double tau = t - times[0];
    std::vector<double> enc(2 * cfg_.time_freqs);
    for (std::size_t j = 0; j < cfg_.time_freqs; ++j) {
      const double omega = 3.14159265358979323846 / double(std::size_t(1) << j);
      enc[2 * j] = std::sin(omega * tau);
      enc[2 * j + 1] = std::cos(omega * tau);
    }
    Tensor enc_t = Tensor::from_data({2 * cfg_.time_freqs, 1}, std::move(enc));
    e = add(e, reshape(matmul(time_w_, enc_t), {cfg_.global_dim}));
  }
  return sum_all(mul(e, g));
}

void Discriminator::collect_params(std::vector<NamedParam>& out, const std::string& prefix) {
  for (std::size_t l = 0; l < enc_w_.size(); ++l) {
    add_param(out, prefix + "enc" + std::to_string(l) + ".w", enc_w_[l]);
    add_param(out, prefix + "enc" + std::to_string(l) + ".b", enc_b_[l]);
  }
  add_param(out, prefix + "fuse.w", fuse_w_);
  add_param(out, prefix + "fuse.b", fuse_b_);
  add_param(out, prefix + "glob.w", glob_w_);
  add_param(out, prefix + "glob.b", glob_b_);
  add_param(out, prefix + "time.w", time_w_);
  add_param(out, prefix + "time.b", time_b_);
}

}  // namespace msgv
