#pragma once

#include <cstddef>

#include "msgv/params.hpp"
#include "msgv/styles.hpp"
#include "msgv/tensor.hpp"

namespace msgv {

// Order of the two weight-modulation steps. ContentFirst ("i") attends with
// the content-modulated weights; MotionFirst ("ii") attends with the raw
// weights, applies the motion step, then the content step.
enum class ModStrategy { ContentFirst, MotionFirst };

// What the attention step saw and produced for one (frame, layer) pair:
// logits A_t (c_out, K), their softmax over K, and the attended modulation
// S_t (c_out, c_in*kh*kw) — a per-output-channel convex combination of the K
// modulation rows.
struct AttentionRecord {
  Tensor logits;
  Tensor weights;
  Tensor attended;
};

// W'[o,i,h,w] = W[o,i,h,w] * s[i]
Tensor content_modulate(const Tensor& W, const Tensor& s);

// A = flatten(W) M^T / sqrt(c_in*kh*kw); S = softmax_K(A) M
AttentionRecord mostatt(const Tensor& W, const Tensor& M);

// Elementwise product with S reshaped to W's layout.
Tensor motion_modulate(const Tensor& W, const Tensor& S);

// Rescales each output channel to unit L2 norm (plus eps inside the root).
Tensor demodulate(const Tensor& W, double eps = 1e-8);

struct ModConvOut {
  Tensor y;
  AttentionRecord att;
};

// One frame through the modulated convolution: modulation chain per the
// strategy, optional demodulation last, then a same-padded convolution with
// bias and leaky-relu. Requires odd square kernels.
ModConvOut modconv_forward(const Tensor& x, const Tensor& W, const Tensor& bias,
                           const Tensor& s, const Tensor& M, ModStrategy strategy,
                           bool demod);

// Owns the filter bank of one such layer and its registration with the style
// system; the generator drives it with per-frame styles.
class ModConvLayer {
 public:
  ModConvLayer(StyleHypernet& styles, const LayerShape& shape, Rng& rng);

  std::size_t layer_id() const { return layer_id_; }
  const LayerShape& shape() const { return shape_; }
  Tensor& weight() { return w_; }
  Tensor& bias() { return b_; }

  ModConvOut forward(const Tensor& x, const Tensor& s, const Tensor& M,
                     ModStrategy strategy, bool demod) const {
    return modconv_forward(x, w_, b_, s, M, strategy, demod);
  }

  void collect_params(std::vector<NamedParam>& out, const std::string& prefix);

 private:
  LayerShape shape_;
  std::size_t layer_id_;
  Tensor w_;  // (c_out, c_in, kh, kw)
  Tensor b_;  // (c_out)
};

}  // namespace msgv
