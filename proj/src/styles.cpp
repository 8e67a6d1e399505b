#include "msgv/styles.hpp"

#include <cmath>
#include <stdexcept>

namespace msgv {

namespace {

// x (n) -> W (m,n) x + b (m)
Tensor affine_vec(const Tensor& W, const Tensor& b, const Tensor& x) {
  return add(reshape(matmul(W, reshape(x, {x.size(), 1})), {W.shape()[0]}), b);
}

Tensor linear_init(Shape shape, Rng& rng) {
  const double fan_in = static_cast<double>(shape.back());
  return Tensor::randn(std::move(shape), rng, 1.0 / std::sqrt(fan_in))
      .set_requires_grad(true);
}

}  // namespace

Tensor lowrank_reconstruct(const Tensor& style, std::size_t c_in, std::size_t kh,
                           std::size_t kw) {
  if (style.rank() != 2) {
    throw std::invalid_argument("lowrank_reconstruct: style must be (R, c_in+kh+kw), got " +
                                shape_str(style.shape()));
  }
  const std::size_t L = c_in + kh + kw;
  if (style.shape()[1] != L) {
    throw std::invalid_argument("lowrank_reconstruct: style length " +
                                std::to_string(style.shape()[1]) + " != c_in+kh+kw = " +
                                std::to_string(L));
  }
  const std::size_t R = style.shape()[0];
  Tensor out = Tensor::zeros({c_in, kh, kw});
  for (std::size_t r = 0; r < R; ++r) {
    Tensor row = reshape(slice(style, 0, r, 1), {L});
    Tensor v1 = slice(row, 0, 0, c_in);
    Tensor v2 = slice(row, 0, c_in, kh);
    Tensor v3 = slice(row, 0, c_in + kh, kw);
    Tensor plane = reshape(outer(v2, v3), {1, kh, kw});
    out = add(out, mul(reshape(v1, {c_in, 1, 1}), plane));
  }
  return out;
}

std::pair<std::uint64_t, std::uint64_t> hyper_param_count(const LayerShape& shape,
                                                          std::size_t d_h, std::size_t R) {
  if (!shape.c_out || !shape.c_in || !shape.kh || !shape.kw || !d_h || !R) {
    throw std::invalid_argument("hyper_param_count: all dimensions must be positive");
  }
  const std::uint64_t lowrank =
      static_cast<std::uint64_t>(d_h) * R * (shape.c_in + shape.kh + shape.kw);
  const std::uint64_t fullrank = static_cast<std::uint64_t>(d_h) * shape.c_out *
                                 shape.c_in * shape.kh * shape.kw;
  return {lowrank, fullrank};
}

StyleHypernet::StyleHypernet(const StyleConfig& cfg, Rng& rng)
    : cfg_(cfg), init_rng_(rng.split()) {
  if (!cfg.d_c || !cfg.d_v || !cfg.K || !cfg.d_m || !cfg.d_h || !cfg.R ||
      !cfg.mapping_layers || !cfg.motion_mlp_width) {
    throw std::invalid_argument("StyleHypernet: all dimensions must be positive");
  }
  for (std::size_t l = 0; l < cfg.mapping_layers; ++l) {
    map_w_.push_back(linear_init({cfg.d_c, cfg.d_c}, rng));
    map_b_.push_back(Tensor::zeros({cfg.d_c}).set_requires_grad(true));
  }
  const std::size_t widths[3] = {cfg.d_c + cfg.d_v, cfg.motion_mlp_width,
                                 cfg.motion_mlp_width};
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t out = (l == 2) ? cfg.K * cfg.d_m : cfg.motion_mlp_width;
    motion_w_.push_back(linear_init({out, widths[l]}, rng));
    motion_b_.push_back(Tensor::zeros({out}).set_requires_grad(true));
  }
  trunk_w_ = linear_init({cfg.d_h, cfg.d_m}, rng);
  trunk_b_ = Tensor::zeros({cfg.d_h}).set_requires_grad(true);
}

std::size_t StyleHypernet::register_layer(const LayerShape& shape) {
  if (!shape.c_out || !shape.c_in || !shape.kh || !shape.kw) {
    throw std::invalid_argument("register_layer: all extents must be positive");
  }
  layers_.push_back(shape);
  affine_w_.push_back(linear_init({shape.c_in, cfg_.d_c}, init_rng_));
  affine_b_.push_back(Tensor::ones({shape.c_in}).set_requires_grad(true));

  // Small weights plus a bias of 1 on the first rank slice: the initial
  // reconstruction is close to an all-ones tensor, i.e. motion modulation
  // starts out as a near-identity.
  const std::size_t L = shape.style_len();
  head_w_.push_back(
      Tensor::randn({cfg_.R * L, cfg_.d_h}, init_rng_, 0.01).set_requires_grad(true));
  std::vector<double> bias(cfg_.R * L, 0.0);
  for (std::size_t i = 0; i < L; ++i) bias[i] = 1.0;
  head_b_.push_back(Tensor::from_data({cfg_.R * L}, std::move(bias)).set_requires_grad(true));
  return layers_.size() - 1;
}

void StyleHypernet::check_layer(std::size_t layer_id) const {
  if (layer_id >= layers_.size()) {
    throw std::invalid_argument("unknown layer id " + std::to_string(layer_id) + " (have " +
                                std::to_string(layers_.size()) + ")");
  }
}

const LayerShape& StyleHypernet::layer_shape(std::size_t layer_id) const {
  check_layer(layer_id);
  return layers_[layer_id];
}

Tensor StyleHypernet::map_content(const Tensor& z_c) const {
  if (z_c.size() != cfg_.d_c) {
    throw std::invalid_argument("map_content: expected d_c=" + std::to_string(cfg_.d_c) +
                                " values, got " + shape_str(z_c.shape()));
  }
  Tensor h = reshape(z_c, {cfg_.d_c});
  for (std::size_t l = 0; l < map_w_.size(); ++l) {
    if (l > 0) h = leaky_relu(h);
    h = affine_vec(map_w_[l], map_b_[l], h);
  }
  return h;
}

Tensor StyleHypernet::affine_style(const Tensor& w, std::size_t layer_id) const {
  check_layer(layer_id);
  return affine_vec(affine_w_[layer_id], affine_b_[layer_id], w);
}

Tensor StyleHypernet::motion_vectors(const Tensor& w, const Tensor& v_t) const {
  if (w.size() != cfg_.d_c || v_t.size() != cfg_.d_v) {
    throw std::invalid_argument("motion_vectors: got w " + shape_str(w.shape()) + ", v_t " +
                                shape_str(v_t.shape()) + "; configured d_c=" +
                                std::to_string(cfg_.d_c) + ", d_v=" + std::to_string(cfg_.d_v));
  }
  Tensor h = concat({reshape(w, {cfg_.d_c}), reshape(v_t, {cfg_.d_v})}, 0);
  for (std::size_t l = 0; l < motion_w_.size(); ++l) {
    if (l > 0) h = leaky_relu(h);
    h = affine_vec(motion_w_[l], motion_b_[l], h);
  }
  return reshape(h, {cfg_.K, cfg_.d_m});
}

Tensor StyleHypernet::hyper_styles(const Tensor& m, std::size_t layer_id) const {
  check_layer(layer_id);
  if (m.rank() != 2 || m.shape()[1] != cfg_.d_m) {
    throw std::invalid_argument("hyper_styles: expected (K," + std::to_string(cfg_.d_m) +
                                ") motion vectors, got " + shape_str(m.shape()));
  }
  const std::size_t K = m.shape()[0];
  Tensor h = leaky_relu(add(matmul(m, transpose2(trunk_w_)), trunk_b_));  // (K, d_h)
  Tensor out = add(matmul(h, transpose2(head_w_[layer_id])), head_b_[layer_id]);
  return reshape(out, {K, cfg_.R, layers_[layer_id].style_len()});
}

Tensor StyleHypernet::modulation_rows(const Tensor& styles, std::size_t layer_id) const {
  check_layer(layer_id);
  const LayerShape& ls = layers_[layer_id];
  if (styles.rank() != 3 || styles.shape()[1] != cfg_.R ||
      styles.shape()[2] != ls.style_len()) {
    throw std::invalid_argument("modulation_rows: styles " + shape_str(styles.shape()) +
                                " do not match layer " + std::to_string(layer_id));
  }
  const std::size_t K = styles.shape()[0];
  std::vector<Tensor> rows;
  rows.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    Tensor one = reshape(slice(styles, 0, k, 1), {cfg_.R, ls.style_len()});
    rows.push_back(reshape(lowrank_reconstruct(one, ls.c_in, ls.kh, ls.kw), {1, ls.flat()}));
  }
  return concat(rows, 0);  // (K, c_in*kh*kw)
}

void StyleHypernet::collect_params(std::vector<NamedParam>& out, const std::string& prefix) {
  for (std::size_t l = 0; l < map_w_.size(); ++l) {
    add_param(out, prefix + "map" + std::to_string(l) + ".w", map_w_[l]);
    add_param(out, prefix + "map" + std::to_string(l) + ".b", map_b_[l]);
  }
  for (std::size_t l = 0; l < motion_w_.size(); ++l) {
    add_param(out, prefix + "motion" + std::to_string(l) + ".w", motion_w_[l]);
    add_param(out, prefix + "motion" + std::to_string(l) + ".b", motion_b_[l]);
  }
  add_param(out, prefix + "trunk.w", trunk_w_);
  add_param(out, prefix + "trunk.b", trunk_b_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const std::string tag = prefix + "layer" + std::to_string(i) + ".";
    add_param(out, tag + "affine.w", affine_w_[i]);
    add_param(out, tag + "affine.b", affine_b_[i]);
    add_param(out, tag + "head.w", head_w_[i]);
    add_param(out, tag + "head.b", head_b_[i]);
  }
}

}  // namespace msgv
