#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "msgv/rng.hpp"

namespace msgv {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand, same length as value
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Pulls this node's grad into the inputs' grads (chain rule step).
  std::function<void(Node&)> backward;

  void accumulate(std::span<const double> g);
  std::vector<double>& ensure_grad();
};

}  // namespace detail

// Suppresses graph recording for the enclosing scope (forward-only evaluation).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  static bool active();

 private:
  bool prev_;
};

// Dense row-major float64 tensor with reverse-mode autodiff.
// Value-semantic handle; copying shares the underlying node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t size() const;
  std::size_t rank() const { return shape().size(); }

  std::span<const double> values() const;
  // Mutable access to a leaf's storage (parameter updates). Invalid on graph nodes.
  std::span<double> values_mut();

  double item() const;  // scalar tensors only
  double at(std::initializer_list<std::size_t> idx) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> grad_mut();
  void zero_grad();

  // Reverse-mode sweep from a scalar. Accumulates into every requires_grad
  // leaf reachable from this node; fan-out contributions are summed.
  void backward() const;

  detail::Node* node() const { return node_.get(); }
  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::Node> n);

 private:
  std::shared_ptr<detail::Node> node_;
};

// Creates a graph node; used by all ops and available to tests for
// injecting custom backward rules.
Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs,
               std::function<void(detail::Node&)> backward);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);  // numpy-style broadcasting
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor abs_t(const Tensor& a);  // subgradient at 0 is 0
Tensor sqrt_t(const Tensor& a);
Tensor rsqrt(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sin_t(const Tensor& a);
Tensor tanh_t(const Tensor& a);
Tensor softplus(const Tensor& a);  // log(1+exp(x)), overflow-stable
Tensor leaky_relu(const Tensor& a, double slope = 0.2);

// ---- shape / reduction ----
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose2(const Tensor& a);  // 2-D
Tensor broadcast_to(const Tensor& a, const Shape& shape);
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim = false);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);  // (n,k) x (k,m) -> (n,m)
Tensor outer(const Tensor& a, const Tensor& b);   // (n) x (m) -> (n,m)
Tensor softmax(const Tensor& a, std::size_t axis);

// ---- convolution / resampling ----
// x: (C_in, L), w: (C_out, C_in, KW); zero padding `pad` on both ends.
Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t pad);
// x: (C_in, H, W), w: (C_out, C_in, KH, KW); stride 1, zero padding `pad`.
Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t pad);
Tensor nearest_upsample2(const Tensor& x);  // (C,H,W) -> (C,2H,2W)
Tensor zero_insert2(const Tensor& x);       // zero-stuffing upsample
Tensor avg_pool2(const Tensor& x);          // (C,H,W) -> (C,H/2,W/2)
// Transposed convolution as zero-insertion upsample followed by conv2d.
Tensor conv2d_transpose2x(const Tensor& x, const Tensor& w, std::size_t pad);

// ---- verification ----
// Max over elements of |analytic - central difference| / max(1, |analytic|).
// `skip` may exclude elements near kinks (returns true to skip).
// With `filter_kinks`, each estimate is cross-validated against a half-step
// estimate and entries where the two disagree are skipped: there the
// perturbation crosses a non-differentiable point (|.|, leaky-relu) and
// central differences do not measure the derivative at all. A wrong backward
// rule is still caught, because both estimates agree with each other.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                  double eps = 1e-4,
                  const std::function<bool(std::size_t, double)>& skip = nullptr,
                  bool filter_kinks = false);

// Same contract, but differentiates a zero-argument forward pass with respect
// to one leaf parameter that the pass reads. Perturbs the parameter in place
// (restoring it afterwards), so the forward must be a pure function of the
// current parameter values.
double param_grad_check(const std::function<Tensor()>& forward, Tensor& param,
                        double eps = 1e-4,
                        const std::function<bool(std::size_t, double)>& skip = nullptr,
                        bool filter_kinks = false);

}  // namespace msgv
