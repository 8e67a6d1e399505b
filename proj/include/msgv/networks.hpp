#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msgv/modconv.hpp"
#include "msgv/motion.hpp"
#include "msgv/params.hpp"
#include "msgv/styles.hpp"

namespace msgv {

struct GeneratorConfig {
  std::size_t resolution = 32;               // 4 * 2^b, b >= 1
  std::size_t const_channels = 64;           // learned 4x4 constant input
  std::vector<std::size_t> channels = {128, 96, 64};  // one entry per block
  ModStrategy strategy = ModStrategy::ContentFirst;
  bool demod = true;
};

struct GenerateResult {
  std::vector<Tensor> frames;  // each (3, H, W), tanh-squashed into [-1,1]
  std::vector<double> times;
  // records[frame][layer]: attention state of every modulated conv
  std::vector<std::vector<AttentionRecord>> records;
  // features entering toRGB, one per frame (for attention-map analysis)
  std::vector<Tensor> last_features;
};

// Synthesis network: learned constant stacked with the broadcast motion code,
// then per block nearest-upsample + two modulated convolutions, then a 1x1
// toRGB with tanh. All time dependence flows through v_t.
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, const StyleConfig& style_cfg,
            const MotionEncoderConfig& motion_cfg, Rng& rng);

  const GeneratorConfig& config() const { return cfg_; }
  StyleHypernet& styles() { return styles_; }
  const StyleHypernet& styles() const { return styles_; }
  MotionEncoder& motion() { return motion_; }
  const MotionEncoder& motion() const { return motion_; }
  std::size_t layer_count() const { return convs_.size(); }
  const ModConvLayer& layer(std::size_t i) const { return convs_[i]; }

  GenerateResult generate_clip(const Tensor& z_c, const MotionNoiseTrack& track,
                               const std::vector<double>& times) const;

  void collect_params(std::vector<NamedParam>& out, const std::string& prefix);

 private:
  GeneratorConfig cfg_;
  MotionEncoder motion_;
  StyleHypernet styles_;
  Tensor constant_;  // (const_channels, 4, 4)
  std::vector<ModConvLayer> convs_;  // two per block
  Tensor rgb_w_;  // (3, last_channels, 1, 1)
  Tensor rgb_b_;  // (3)
};

struct ItemSequence {
  std::vector<Tensor> items;  // frames followed by |x_{i+1}-x_i| difference frames
  std::vector<double> times;  // frame times, then midpoints for the differences
};

// (x_1..x_N) -> (x_1..x_N, |x_2-x_1|, ..., |x_N-x_{N-1}|): 2N-1 items.
ItemSequence frame_differences(const std::vector<Tensor>& frames,
                               const std::vector<double>& times);

struct DiscriminatorConfig {
  std::size_t resolution = 32;
  std::vector<std::size_t> channels = {32, 64, 96};  // stem + one per halving to 8x8
  std::size_t items = 5;       // fixed input arity (2T-1 with motion diffs, else T)
  std::size_t global_dim = 64;
  std::size_t time_freqs = 8;  // sinusoid pairs in the time-delta encoding
};

// Shared per-item conv encoder down to 8x8, channel-concat across items, conv
// fuse + linear to a global vector g; time deltas are sinusoid-encoded,
// projected and summed to e; the logit is <e, g>.
class Discriminator {
 public:
  Discriminator(const DiscriminatorConfig& cfg, Rng& rng);

  const DiscriminatorConfig& config() const { return cfg_; }

  Tensor discriminate(const std::vector<Tensor>& items,
                      const std::vector<double>& times) const;

  void collect_params(std::vector<NamedParam>& out, const std::string& prefix);

 private:
  Tensor encode_item(const Tensor& x) const;  // (channels.back(), 8, 8)

  DiscriminatorConfig cfg_;
  std::vector<Tensor> enc_w_, enc_b_;
  Tensor fuse_w_, fuse_b_;  // (fuse_c, items*channels.back(), 3, 3)
  Tensor glob_w_, glob_b_;  // global_dim x (fuse_c * 64)
  Tensor time_w_, time_b_;  // global_dim x (2*time_freqs)
};

}  // namespace msgv
