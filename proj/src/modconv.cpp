#include "msgv/modconv.hpp"

#include <cmath>
#include <stdexcept>

namespace msgv {

Tensor content_modulate(const Tensor& W, const Tensor& s) {
  if (W.rank() != 4) {
    throw std::invalid_argument("content_modulate: weights must be 4-D, got " +
                                shape_str(W.shape()));
  }
  if (s.rank() != 1 || s.size() != W.shape()[1]) {
    throw std::invalid_argument("content_modulate: style " + shape_str(s.shape()) +
                                " does not match c_in of " + shape_str(W.shape()));
  }
  return mul(W, reshape(s, {1, s.size(), 1, 1}));
}

AttentionRecord mostatt(const Tensor& W, const Tensor& M) {
  if (W.rank() != 4 || M.rank() != 2) {
    throw std::invalid_argument("mostatt: expected 4-D weights and (K,D) rows, got " +
                                shape_str(W.shape()) + " and " + shape_str(M.shape()));
  }
  const std::size_t c_out = W.shape()[0];
  const std::size_t D = W.shape()[1] * W.shape()[2] * W.shape()[3];
  if (M.shape()[1] != D) {
    throw std::invalid_argument("mostatt: modulation row length " +
                                std::to_string(M.shape()[1]) + " != c_in*kh*kw = " +
                                std::to_string(D));
  }
  AttentionRecord rec;
  Tensor flat = reshape(W, {c_out, D});
  rec.logits = mul_scalar(matmul(flat, transpose2(M)), 1.0 / std::sqrt(double(D)));
  rec.weights = softmax(rec.logits, 1);
  rec.attended = matmul(rec.weights, M);
  return rec;
}

Tensor motion_modulate(const Tensor& W, const Tensor& S) {
  if (S.size() != W.size()) {
    throw std::invalid_argument("motion_modulate: attended modulation " +
                                shape_str(S.shape()) + " does not fill weights " +
                                shape_str(W.shape()));
  }
  return mul(W, reshape(S, W.shape()));
}

Tensor demodulate(const Tensor& W, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("demodulate: eps must be positive");
  if (W.rank() != 4) {
    throw std::invalid_argument("demodulate: weights must be 4-D, got " +
                                shape_str(W.shape()));
  }
  Tensor sumsq = sum_axis(sum_axis(sum_axis(mul(W, W), 3), 2), 1);  // (c_out)
  Tensor scale = rsqrt(add_scalar(sumsq, eps));
  return mul(W, reshape(scale, {W.shape()[0], 1, 1, 1}));
}

ModConvOut modconv_forward(const Tensor& x, const Tensor& W, const Tensor& bias,
                           const Tensor& s, const Tensor& M, ModStrategy strategy,
                           bool demod) {
  const std::size_t kh = W.shape()[2], kw = W.shape()[3];
  if (kh != kw || kh % 2 == 0) {
    throw std::invalid_argument("modconv_forward: kernel must be odd and square, got " +
                                shape_str(W.shape()));
  }
  ModConvOut out;
  Tensor Wt;
  switch (strategy) {
    case ModStrategy::ContentFirst: {
      Tensor Wc = content_modulate(W, s);
      out.att = mostatt(Wc, M);
      Wt = motion_modulate(Wc, out.att.attended);
      break;
    }
    case ModStrategy::MotionFirst: {
      out.att = mostatt(W, M);
      Wt = content_modulate(motion_modulate(W, out.att.attended), s);
      break;
    }
    default:
      throw std::invalid_argument("modconv_forward: unknown strategy");
  }
  if (demod) Wt = demodulate(Wt);
  Tensor y = conv2d(x, Wt, kh / 2);
  y = add(y, reshape(bias, {W.shape()[0], 1, 1}));
  out.y = leaky_relu(y);
  return out;
}

ModConvLayer::ModConvLayer(StyleHypernet& styles, const LayerShape& shape, Rng& rng)
    : shape_(shape), layer_id_(styles.register_layer(shape)) {
  const double std = 1.0 / std::sqrt(static_cast<double>(shape.c_in * shape.kh * shape.kw));
  w_ = Tensor::randn({shape.c_out, shape.c_in, shape.kh, shape.kw}, rng, std)
           .set_requires_grad(true);
  b_ = Tensor::zeros({shape.c_out}).set_requires_grad(true);
}

void ModConvLayer::collect_params(std::vector<NamedParam>& out, const std::string& prefix) {
  add_param(out, prefix + "w", w_);
  add_param(out, prefix + "b", b_);
}

}  // namespace msgv
