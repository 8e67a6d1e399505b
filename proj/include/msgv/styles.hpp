#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msgv/params.hpp"
#include "msgv/rng.hpp"
#include "msgv/tensor.hpp"

namespace msgv {

struct LayerShape {
  std::size_t c_out = 0, c_in = 0, kh = 0, kw = 0;

  std::size_t flat() const { return c_in * kh * kw; }        // D
  std::size_t style_len() const { return c_in + kh + kw; }   // low-rank slice length
};

struct StyleConfig {
  std::size_t d_c = 64;              // content latent / intermediate latent width
  std::size_t mapping_layers = 2;    // depth of the content mapping MLP
  std::size_t d_v = 16;              // motion code width fed into the motion MLP
  std::size_t motion_mlp_width = 256;
  std::size_t K = 8;                 // number of motion styles
  std::size_t d_m = 128;             // motion vector width
  std::size_t d_h = 128;             // hypernetwork hidden width
  std::size_t R = 1;                 // rank of the reconstruction
};

// Rebuilds the (c_in, kh, kw) modulation tensor from one flat style of shape
// (R, c_in+kh+kw): each rank slice splits into v1 (c_in), v2 (kh), v3 (kw)
// and contributes the triple outer product v1 (x) v2 (x) v3.
Tensor lowrank_reconstruct(const Tensor& style, std::size_t c_in, std::size_t kh,
                           std::size_t kw);

// (weights-only) parameter count of one per-layer hypernetwork head vs. a
// dense head that would emit the full (c_out, c_in, kh, kw) tensor directly.
std::pair<std::uint64_t, std::uint64_t> hyper_param_count(const LayerShape& shape,
                                                          std::size_t d_h, std::size_t R);

// Owns every style-producing network: the content mapping MLP, per-layer
// affine style heads (bias starts at 1 so styles begin as identity), the
// motion MLP emitting K motion vectors, and the shared hypernetwork trunk
// with per-layer low-rank heads. Conv layers register their shapes up front
// and are afterwards addressed by the returned id.
class StyleHypernet {
 public:
  StyleHypernet(const StyleConfig& cfg, Rng& rng);

  const StyleConfig& config() const { return cfg_; }

  std::size_t register_layer(const LayerShape& shape);
  std::size_t layer_count() const { return layers_.size(); }
  const LayerShape& layer_shape(std::size_t layer_id) const;

  // z_c (d_c) -> intermediate latent w (d_c); time-agnostic.
  Tensor map_content(const Tensor& z_c) const;

  // w -> content style s (c_in) for one registered layer.
  Tensor affine_style(const Tensor& w, std::size_t layer_id) const;

  // (w, v_t) -> K x d_m motion vectors; time enters only through v_t.
  Tensor motion_vectors(const Tensor& w, const Tensor& v_t) const;

  // motion vectors -> K x R x (c_in+kh+kw) motion styles for one layer.
  Tensor hyper_styles(const Tensor& m, std::size_t layer_id) const;

  // Stacked reconstruction: K x (c_in*kh*kw), one flattened modulation tensor
  // per style, ready for the attention step.
  Tensor modulation_rows(const Tensor& styles, std::size_t layer_id) const;

  void collect_params(std::vector<NamedParam>& out, const std::string& prefix);

 private:
  void check_layer(std::size_t layer_id) const;

  StyleConfig cfg_;
  Rng init_rng_;  // defers per-layer head init until registration

  std::vector<Tensor> map_w_, map_b_;        // mapping MLP
  std::vector<Tensor> motion_w_, motion_b_;  // motion MLP (concat(w, v_t) -> K*d_m)
  Tensor trunk_w_, trunk_b_;                 // shared hypernet trunk d_m -> d_h

  std::vector<LayerShape> layers_;
  std::vector<Tensor> affine_w_, affine_b_;  // per-layer content style heads
  std::vector<Tensor> head_w_, head_b_;      // per-layer hypernet heads
};

}  // namespace msgv
