#include "msgv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <unordered_set>

#include "msgv/errors.hpp"

namespace msgv {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

void Node::accumulate(std::span<const double> g) {
  auto& dst = ensure_grad();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i];
}

std::vector<double>& Node::ensure_grad() {
  if (grad.empty()) grad.assign(value.size(), 0.0);
  return grad;
}

}  // namespace detail

namespace {

thread_local bool g_no_grad = false;

void check_finite(const char* op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    }
  }
}

}  // namespace

NoGradGuard::NoGradGuard() : prev_(g_no_grad) { g_no_grad = true; }
NoGradGuard::~NoGradGuard() { g_no_grad = prev_; }
bool NoGradGuard::active() { return g_no_grad; }

Tensor Tensor::wrap(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double v) {
  auto n = std::make_shared<detail::Node>();
  n->value.assign(shape_numel(shape), v);
  n->shape = std::move(shape);
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double v) { return full({}, v); }

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("from_data: shape " + shape_str(shape) + " needs " +
                                std::to_string(shape_numel(shape)) + " values, got " +
                                std::to_string(data.size()));
  }
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  return wrap(std::move(n));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::vector<double> data(shape_numel(shape));
  for (auto& x : data) x = stddev * rng.normal();
  return from_data(std::move(shape), std::move(data));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::size() const { return node_->value.size(); }

std::span<const double> Tensor::values() const { return node_->value; }

std::span<double> Tensor::values_mut() {
  if (!node_->inputs.empty()) {
    throw std::logic_error("values_mut: only leaf tensors are mutable");
  }
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) {
    throw std::invalid_argument("item: tensor of shape " + shape_str(shape()) +
                                " is not a scalar");
  }
  return node_->value[0];
}

double Tensor::at(std::initializer_list<std::size_t> idx) const {
  const auto& s = shape();
  if (idx.size() != s.size()) throw std::invalid_argument("at: rank mismatch");
  std::size_t off = 0, d = 0;
  for (auto i : idx) {
    off = off * s[d] + i;
    ++d;
  }
  return node_->value[off];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  node_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw std::logic_error("grad: no gradient accumulated");
  return node_->grad;
}

std::span<double> Tensor::grad_mut() {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

void Tensor::backward() const {
  if (size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " +
                                shape_str(shape()));
  }
  // Iterative DFS topological order; visits each node exactly once.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->inputs.size()) {
      detail::Node* child = n->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) {
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  node_->grad.assign(1, 1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
}

Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<Tensor> inputs, std::function<void(detail::Node&)> backward) {
  check_finite(op, value);
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->op = op;
  bool needs_grad = false;
  if (!g_no_grad) {
    for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  }
  if (needs_grad) {
    n->requires_grad = true;
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node_ptr());
    n->backward = std::move(backward);
  }
  return Tensor::wrap(std::move(n));
}

// ---------------------------------------------------------------------------
// elementwise ops
// ---------------------------------------------------------------------------

namespace {

// dy/dx expressed in terms of input x and output y.
template <typename F, typename DF>
Tensor unary_op(const char* name, const Tensor& a, F f, DF df) {
  const auto& x = a.node()->value;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return make_op(name, a.shape(), std::move(y), {a}, [df](detail::Node& n) {
    auto& in = *n.inputs[0];
    auto& dst = in.ensure_grad();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] += n.grad[i] * df(in.value[i], n.value[i]);
    }
  });
}

struct BcastPlan {
  Shape out;
  // per output dim: the element stride into each operand (0 on broadcast dims)
  std::vector<std::size_t> sa, sb;
};

BcastPlan broadcast_plan(const char* op, const Shape& a, const Shape& b) {
  BcastPlan p;
  const std::size_t ra = a.size(), rb = b.size();
  const std::size_t r = std::max(ra, rb);
  p.out.resize(r);
  std::vector<std::size_t> da(r, 1), db(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    if (i >= r - ra) da[i] = a[i - (r - ra)];
    if (i >= r - rb) db[i] = b[i - (r - rb)];
    if (da[i] != db[i] && da[i] != 1 && db[i] != 1) {
      throw std::invalid_argument(std::string(op) + ": shapes " + shape_str(a) + " and " +
                                  shape_str(b) + " do not broadcast");
    }
    p.out[i] = std::max(da[i], db[i]);
  }
  p.sa.assign(r, 0);
  p.sb.assign(r, 0);
  std::size_t stra = 1, strb = 1;
  for (std::size_t i = r; i-- > 0;) {
    if (da[i] != 1) {
      p.sa[i] = stra;
      stra *= da[i];
    }
    if (db[i] != 1) {
      p.sb[i] = strb;
      strb *= db[i];
    }
  }
  return p;
}

// Applies fn(out_index, a_index, b_index) over every output element in
// row-major order.
template <typename Fn>
void for_each_bcast(const BcastPlan& p, Fn fn) {
  const std::size_t r = p.out.size();
  const std::size_t total = shape_numel(p.out);
  std::vector<std::size_t> idx(r, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t o = 0; o < total; ++o) {
    fn(o, ia, ib);
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < p.out[d]) {
        ia += p.sa[d];
        ib += p.sb[d];
        break;
      }
      ia -= p.sa[d] * (p.out[d] - 1);
      ib -= p.sb[d] * (p.out[d] - 1);
      idx[d] = 0;
    }
  }
}

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
  const auto& xa = a.node()->value;
  const auto& xb = b.node()->value;
  if (a.shape() == b.shape()) {
    // fast path, no index arithmetic
    std::vector<double> y(xa.size());
    switch (kind) {
      case BinKind::Add:
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] + xb[i];
        break;
      case BinKind::Sub:
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] - xb[i];
        break;
      case BinKind::Mul:
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = xa[i] * xb[i];
        break;
    }
    return make_op(name, a.shape(), std::move(y), {a, b}, [kind](detail::Node& n) {
      auto& na = *n.inputs[0];
      auto& nb = *n.inputs[1];
      if (na.requires_grad) {
        auto& da = na.ensure_grad();
        switch (kind) {
          case BinKind::Add:
          case BinKind::Sub:
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += n.grad[i];
            break;
          case BinKind::Mul:
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += n.grad[i] * nb.value[i];
            break;
        }
      }
      if (nb.requires_grad) {
        auto& db = nb.ensure_grad();
        switch (kind) {
          case BinKind::Add:
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += n.grad[i];
            break;
          case BinKind::Sub:
            for (std::size_t i = 0; i < db.size(); ++i) db[i] -= n.grad[i];
            break;
          case BinKind::Mul:
            for (std::size_t i = 0; i < db.size(); ++i) db[i] += n.grad[i] * na.value[i];
            break;
        }
      }
    });
  }

  auto plan = broadcast_plan(name, a.shape(), b.shape());
  std::vector<double> y(shape_numel(plan.out));
  switch (kind) {
    case BinKind::Add:
      for_each_bcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        y[o] = xa[ia] + xb[ib];
      });
      break;
    case BinKind::Sub:
      for_each_bcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        y[o] = xa[ia] - xb[ib];
      });
      break;
    case BinKind::Mul:
      for_each_bcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
        y[o] = xa[ia] * xb[ib];
      });
      break;
  }
  return make_op(name, plan.out, std::move(y), {a, b}, [kind, plan](detail::Node& n) {
    auto& na = *n.inputs[0];
    auto& nb = *n.inputs[1];
    double* da = na.requires_grad ? na.ensure_grad().data() : nullptr;
    double* db = nb.requires_grad ? nb.ensure_grad().data() : nullptr;
    for_each_bcast(plan, [&](std::size_t o, std::size_t ia, std::size_t ib) {
      const double g = n.grad[o];
      switch (kind) {
        case BinKind::Add:
          if (da) da[ia] += g;
          if (db) db[ib] += g;
          break;
        case BinKind::Sub:
          if (da) da[ia] += g;
          if (db) db[ib] -= g;
          break;
        case BinKind::Mul:
          if (da) da[ia] += g * nb.value[ib];
          if (db) db[ib] += g * na.value[ia];
          break;
      }
    });
  });
}

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op("add", BinKind::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op("sub", BinKind::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op("mul", BinKind::Mul, a, b); }

Tensor neg(const Tensor& a) {
  return unary_op("neg", a, [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary_op("add_scalar", a, [s](double x) { return x + s; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return unary_op("mul_scalar", a, [s](double x) { return x * s; },
                  [s](double, double) { return s; });
}

Tensor abs_t(const Tensor& a) {
  return unary_op("abs", a, [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt_t(const Tensor& a) {
  return unary_op("sqrt", a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor rsqrt(const Tensor& a) {
  return unary_op("rsqrt", a, [](double x) { return 1.0 / std::sqrt(x); },
                  [](double x, double y) { return -0.5 * y / x; });
}

Tensor exp_t(const Tensor& a) {
  return unary_op("exp", a, [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_op("log", a, [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sin_t(const Tensor& a) {
  return unary_op("sin", a, [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}

Tensor tanh_t(const Tensor& a) {
  return unary_op("tanh", a, [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& a) {
  return unary_op("softplus", a,
                  [](double x) { return x > 0.0 ? x + std::log1p(std::exp(-x))
                                                : std::log1p(std::exp(x)); },
                  [](double x, double) { return sigmoid_stable(x); });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  return unary_op("leaky_relu", a,
                  [slope](double x) { return x >= 0.0 ? x : slope * x; },
                  [slope](double x, double) { return x >= 0.0 ? 1.0 : slope; });
}

// ---------------------------------------------------------------------------
// shape / reduction ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                shape_str(shape));
  }
  std::vector<double> y(a.values().begin(), a.values().end());
  return make_op("reshape", std::move(shape), std::move(y), {a}, [](detail::Node& n) {
    n.inputs[0]->accumulate(n.grad);
  });
}

Tensor transpose2(const Tensor& a) {
  if (a.rank() != 2) {
    throw std::invalid_argument("transpose2: expected rank-2 tensor, got " +
                                shape_str(a.shape()));
  }
  const std::size_t n = a.shape()[0], m = a.shape()[1];
  const auto x = a.values();
  std::vector<double> y(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) y[j * n + i] = x[i * m + j];
  return make_op("transpose2", {m, n}, std::move(y), {a}, [n, m](detail::Node& node) {
    auto& dst = node.inputs[0]->ensure_grad();
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = 0; i < n; ++i) dst[i * m + j] += node.grad[j * n + i];
  });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  auto plan = broadcast_plan("broadcast_to", a.shape(), shape);
  if (plan.out != shape) {
    throw std::invalid_argument("broadcast_to: " + shape_str(a.shape()) +
                                " does not broadcast to " + shape_str(shape));
  }
  const auto x = a.values();
  std::vector<double> y(shape_numel(shape));
  for_each_bcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) { y[o] = x[ia]; });
  return make_op("broadcast_to", shape, std::move(y), {a}, [plan](detail::Node& n) {
    auto& dst = n.inputs[0]->ensure_grad();
    for_each_bcast(plan, [&](std::size_t o, std::size_t ia, std::size_t) {
      dst[ia] += n.grad[o];
    });
  });
}

Tensor sum_all(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_op("sum_all", {}, {s}, {a}, [](detail::Node& n) {
    auto& dst = n.inputs[0]->ensure_grad();
    const double g = n.grad[0];
    for (auto& d : dst) d += g;
  });
}

Tensor mean_all(const Tensor& a) {
  const double scale = 1.0 / static_cast<double>(a.size());
  return mul_scalar(sum_all(a), scale);
}

namespace {

// Decomposes a shape around `axis` into (outer, extent, inner) strides.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit axis_split(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  if (axis >= a.rank()) throw std::invalid_argument("sum_axis: axis out of range");
  auto sp = axis_split(a.shape(), axis);
  Shape out;
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i == axis) {
      if (keepdim) out.push_back(1);
    } else {
      out.push_back(a.shape()[i]);
    }
  }
  const auto x = a.values();
  std::vector<double> y(sp.outer * sp.inner, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t k = 0; k < sp.extent; ++k) {
      const double* src = x.data() + (o * sp.extent + k) * sp.inner;
      double* dst = y.data() + o * sp.inner;
      for (std::size_t i = 0; i < sp.inner; ++i) dst[i] += src[i];
    }
  return make_op("sum_axis", std::move(out), std::move(y), {a}, [sp](detail::Node& n) {
    auto& dst = n.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t k = 0; k < sp.extent; ++k) {
        double* d = dst.data() + (o * sp.extent + k) * sp.inner;
        const double* g = n.grad.data() + o * sp.inner;
        for (std::size_t i = 0; i < sp.inner; ++i) d[i] += g[i];
      }
  });
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  const double scale = 1.0 / static_cast<double>(a.shape()[axis]);
  return mul_scalar(sum_axis(a, axis, keepdim), scale);
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw std::invalid_argument("concat: axis out of range");
  Shape out = s0;
  std::size_t total_axis = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != s0.size()) {
      throw std::invalid_argument("concat: rank mismatch between " + shape_str(s0) +
                                  " and " + shape_str(s));
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) {
        throw std::invalid_argument("concat: shape mismatch between " + shape_str(s0) +
                                    " and " + shape_str(s));
      }
    }
    total_axis += s[axis];
  }
  out[axis] = total_axis;

  auto sp_out = axis_split(out, axis);
  std::vector<double> y(shape_numel(out));
  std::vector<std::size_t> extents;
  extents.reserve(parts.size());
  for (const auto& p : parts) extents.push_back(p.shape()[axis]);

  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const auto x = parts[pi].values();
    const std::size_t ext = extents[pi];
    for (std::size_t o = 0; o < sp_out.outer; ++o) {
      const double* src = x.data() + o * ext * sp_out.inner;
      double* dst = y.data() + (o * sp_out.extent + offset) * sp_out.inner;
      std::copy(src, src + ext * sp_out.inner, dst);
    }
    offset += ext;
  }
  std::vector<Tensor> ins(parts.begin(), parts.end());
  return make_op("concat", out, std::move(y), std::move(ins),
                 [sp_out, extents](detail::Node& n) {
                   std::size_t off = 0;
                   for (std::size_t pi = 0; pi < n.inputs.size(); ++pi) {
                     auto& in = *n.inputs[pi];
                     const std::size_t ext = extents[pi];
                     if (in.requires_grad) {
                       auto& dst = in.ensure_grad();
                       for (std::size_t o = 0; o < sp_out.outer; ++o) {
                         const double* g =
                             n.grad.data() + (o * sp_out.extent + off) * sp_out.inner;
                         double* d = dst.data() + o * ext * sp_out.inner;
                         for (std::size_t i = 0; i < ext * sp_out.inner; ++i) d[i] += g[i];
                       }
                     }
                     off += ext;
                   }
                 });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  if (axis >= a.rank()) throw std::invalid_argument("slice: axis out of range");
  if (start + len > a.shape()[axis]) {
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") exceeds axis extent " +
                                std::to_string(a.shape()[axis]));
  }
  auto sp = axis_split(a.shape(), axis);
  Shape out = a.shape();
  out[axis] = len;
  const auto x = a.values();
  std::vector<double> y(shape_numel(out));
  for (std::size_t o = 0; o < sp.outer; ++o) {
    const double* src = x.data() + (o * sp.extent + start) * sp.inner;
    std::copy(src, src + len * sp.inner, y.data() + o * len * sp.inner);
  }
  return make_op("slice", std::move(out), std::move(y), {a},
                 [sp, start, len](detail::Node& n) {
                   auto& dst = n.inputs[0]->ensure_grad();
                   for (std::size_t o = 0; o < sp.outer; ++o) {
                     double* d = dst.data() + (o * sp.extent + start) * sp.inner;
                     const double* g = n.grad.data() + o * len * sp.inner;
                     for (std::size_t i = 0; i < len * sp.inner; ++i) d[i] += g[i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// matmul / softmax
// ---------------------------------------------------------------------------

namespace {

// C += A(n,k) * B(k,m); row-major, fixed iteration order.
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* A, const double* B,
             double* C) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = A + i * k;
    double* c = C + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + p * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

// C += A(n,k) * B(m,k)^T
void gemm_nt(std::size_t n, std::size_t k, std::size_t m, const double* A, const double* B,
             double* C) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* a = A + i * k;
    double* c = C + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* b = B + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p] * b[p];
      c[j] += acc;
    }
  }
}

// C += A(k,n)^T * B(k,m)
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* A, const double* B,
             double* C) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* a = A + p * n;
    const double* b = B + p * m;
    for (std::size_t i = 0; i < n; ++i) {
      const double av = a[i];
      double* c = C + i * m;
      for (std::size_t j = 0; j < m; ++j) c[j] += av * b[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  const std::size_t n = a.shape()[0], k = a.shape()[1], m = b.shape()[1];
  std::vector<double> y(n * m, 0.0);
  gemm_nn(n, k, m, a.values().data(), b.values().data(), y.data());
  return make_op("matmul", {n, m}, std::move(y), {a, b}, [n, k, m](detail::Node& node) {
    auto& na = *node.inputs[0];
    auto& nb = *node.inputs[1];
    if (na.requires_grad) {
      // dA += G * B^T
      gemm_nt(n, m, k, node.grad.data(), nb.value.data(), na.ensure_grad().data());
    }
    if (nb.requires_grad) {
      // dB += A^T * G
      gemm_tn(k, n, m, na.value.data(), node.grad.data(), nb.ensure_grad().data());
    }
  });
}

Tensor outer(const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1) {
    throw std::invalid_argument("outer: expected vectors, got " + shape_str(a.shape()) +
                                " and " + shape_str(b.shape()));
  }
  return matmul(reshape(a, {a.size(), 1}), reshape(b, {1, b.size()}));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) throw std::invalid_argument("softmax: axis out of range");
  auto sp = axis_split(a.shape(), axis);
  const auto x = a.values();
  std::vector<double> y(x.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.extent * sp.inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < sp.extent; ++k) mx = std::max(mx, x[base + k * sp.inner]);
      double sum = 0.0;
      for (std::size_t k = 0; k < sp.extent; ++k) {
        const double e = std::exp(x[base + k * sp.inner] - mx);
        y[base + k * sp.inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::size_t k = 0; k < sp.extent; ++k) y[base + k * sp.inner] *= inv;
    }
  }
  return make_op("softmax", a.shape(), std::move(y), {a}, [sp](detail::Node& n) {
    auto& dst = n.inputs[0]->ensure_grad();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.inner; ++i) {
        const std::size_t base = o * sp.extent * sp.inner + i;
        double dot = 0.0;
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t ix = base + k * sp.inner;
          dot += n.grad[ix] * n.value[ix];
        }
        for (std::size_t k = 0; k < sp.extent; ++k) {
          const std::size_t ix = base + k * sp.inner;
          dst[ix] += n.value[ix] * (n.grad[ix] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// convolution / resampling
// ---------------------------------------------------------------------------

Tensor conv1d(const Tensor& x, const Tensor& w, std::size_t pad) {
  if (x.rank() != 2 || w.rank() != 3 || x.shape()[0] != w.shape()[1]) {
    throw std::invalid_argument("conv1d: incompatible shapes " + shape_str(x.shape()) +
                                " and " + shape_str(w.shape()));
  }
  const std::size_t cin = x.shape()[0], L = x.shape()[1];
  const std::size_t cout = w.shape()[0], kw = w.shape()[2];
  if (L + 2 * pad < kw) throw std::invalid_argument("conv1d: kernel wider than padded input");
  const std::size_t Lo = L + 2 * pad - kw + 1;
  const auto xv = x.values();
  const auto wv = w.values();
  std::vector<double> y(cout * Lo, 0.0);
  for (std::size_t oc = 0; oc < cout; ++oc)
    for (std::size_t ic = 0; ic < cin; ++ic)
      for (std::size_t k = 0; k < kw; ++k) {
        const double wk = wv[(oc * cin + ic) * kw + k];
        for (std::size_t t = 0; t < Lo; ++t) {
          const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                     static_cast<std::ptrdiff_t>(pad);
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(L)) {
            y[oc * Lo + t] += wk * xv[ic * L + src];
          }
        }
      }
  return make_op("conv1d", {cout, Lo}, std::move(y), {x, w},
                 [cin, L, cout, kw, pad, Lo](detail::Node& n) {
                   auto& nx = *n.inputs[0];
                   auto& nw = *n.inputs[1];
                   double* dx = nx.requires_grad ? nx.ensure_grad().data() : nullptr;
                   double* dw = nw.requires_grad ? nw.ensure_grad().data() : nullptr;
                   for (std::size_t oc = 0; oc < cout; ++oc)
                     for (std::size_t ic = 0; ic < cin; ++ic)
                       for (std::size_t k = 0; k < kw; ++k) {
                         const std::size_t widx = (oc * cin + ic) * kw + k;
                         const double wk = nw.value[widx];
                         double wacc = 0.0;
                         for (std::size_t t = 0; t < Lo; ++t) {
                           const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) -
                                                      static_cast<std::ptrdiff_t>(pad);
                           if (src < 0 || src >= static_cast<std::ptrdiff_t>(L)) continue;
                           const double g = n.grad[oc * Lo + t];
                           if (dx) dx[ic * L + src] += wk * g;
                           wacc += nx.value[ic * L + src] * g;
                         }
                         if (dw) dw[widx] += wacc;
                       }
                 });
}

namespace {

// Gathers conv2d patches: col is (Cin*KH*KW, Ho*Wo) row-major.
void im2col(const double* x, std::size_t cin, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t pad, std::size_t Ho, std::size_t Wo, double* col) {
  const std::size_t S = Ho * Wo;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        double* row = col + ((c * kh + ky) * kw + kx) * S;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          double* dst = row + oy * Wo;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) {
            std::fill(dst, dst + Wo, 0.0);
            continue;
          }
          const double* src = x + (c * H + sy) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            dst[ox] = (sx >= 0 && sx < static_cast<std::ptrdiff_t>(W)) ? src[sx] : 0.0;
          }
        }
      }
    }
  }
}

// Scatter-add of col gradients back into the input layout.
void col2im(const double* col, std::size_t cin, std::size_t H, std::size_t W, std::size_t kh,
            std::size_t kw, std::size_t pad, std::size_t Ho, std::size_t Wo, double* dx) {
  const std::size_t S = Ho * Wo;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const double* row = col + ((c * kh + ky) * kw + kx) * S;
        for (std::size_t oy = 0; oy < Ho; ++oy) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(oy + ky) -
                                    static_cast<std::ptrdiff_t>(pad);
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(H)) continue;
          const double* g = row + oy * Wo;
          double* dst = dx + (c * H + sy) * W;
          for (std::size_t ox = 0; ox < Wo; ++ox) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ox + kx) -
                                      static_cast<std::ptrdiff_t>(pad);
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(W)) dst[sx] += g[ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, std::size_t pad) {
  if (x.rank() != 3 || w.rank() != 4 || x.shape()[0] != w.shape()[1]) {
    throw std::invalid_argument("conv2d: incompatible shapes " + shape_str(x.shape()) +
                                " and " + shape_str(w.shape()));
  }
  const std::size_t cin = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const std::size_t cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (H + 2 * pad < kh || W + 2 * pad < kw) {
    throw std::invalid_argument("conv2d: kernel larger than padded input");
  }
  const std::size_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  const std::size_t D = cin * kh * kw, S = Ho * Wo;

  auto col = std::make_shared<std::vector<double>>(D * S);
  im2col(x.values().data(), cin, H, W, kh, kw, pad, Ho, Wo, col->data());
  std::vector<double> y(cout * S, 0.0);
  gemm_nn(cout, D, S, w.values().data(), col->data(), y.data());

  return make_op(
      "conv2d", {cout, Ho, Wo}, std::move(y), {x, w},
      [cin, H, W, cout, kh, kw, pad, Ho, Wo, D, S, col](detail::Node& n) {
        auto& nx = *n.inputs[0];
        auto& nw = *n.inputs[1];
        if (nw.requires_grad) {
          // dW += G(cout,S) * col^T
          gemm_nt(cout, S, D, n.grad.data(), col->data(), nw.ensure_grad().data());
        }
        if (nx.requires_grad) {
          std::vector<double> dcol(D * S, 0.0);
          // dcol = W^T(D,cout) * G(cout,S)
          gemm_tn(D, cout, S, nw.value.data(), n.grad.data(), dcol.data());
          col2im(dcol.data(), cin, H, W, kh, kw, pad, Ho, Wo, nx.ensure_grad().data());
        }
      });
}

Tensor nearest_upsample2(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("nearest_upsample2: expected (C,H,W)");
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const auto xv = x.values();
  std::vector<double> y(C * 4 * H * W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        const double v = xv[(c * H + i) * W + j];
        double* base = y.data() + (c * 2 * H + 2 * i) * 2 * W + 2 * j;
        base[0] = v;
        base[1] = v;
        base[2 * W] = v;
        base[2 * W + 1] = v;
      }
  return make_op("nearest_upsample2", {C, 2 * H, 2 * W}, std::move(y), {x},
                 [C, H, W](detail::Node& n) {
                   auto& dst = n.inputs[0]->ensure_grad();
                   for (std::size_t c = 0; c < C; ++c)
                     for (std::size_t i = 0; i < H; ++i)
                       for (std::size_t j = 0; j < W; ++j) {
                         const double* g = n.grad.data() + (c * 2 * H + 2 * i) * 2 * W + 2 * j;
                         dst[(c * H + i) * W + j] += g[0] + g[1] + g[2 * W] + g[2 * W + 1];
                       }
                 });
}

Tensor zero_insert2(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("zero_insert2: expected (C,H,W)");
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const auto xv = x.values();
  std::vector<double> y(C * 4 * H * W, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        y[(c * 2 * H + 2 * i) * 2 * W + 2 * j] = xv[(c * H + i) * W + j];
      }
  return make_op("zero_insert2", {C, 2 * H, 2 * W}, std::move(y), {x},
                 [C, H, W](detail::Node& n) {
                   auto& dst = n.inputs[0]->ensure_grad();
                   for (std::size_t c = 0; c < C; ++c)
                     for (std::size_t i = 0; i < H; ++i)
                       for (std::size_t j = 0; j < W; ++j) {
                         dst[(c * H + i) * W + j] +=
                             n.grad[(c * 2 * H + 2 * i) * 2 * W + 2 * j];
                       }
                 });
}

Tensor avg_pool2(const Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("avg_pool2: expected (C,H,W)");
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (H % 2 || W % 2) {
    throw std::invalid_argument("avg_pool2: odd extent in " + shape_str(x.shape()));
  }
  const std::size_t Ho = H / 2, Wo = W / 2;
  const auto xv = x.values();
  std::vector<double> y(C * Ho * Wo);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < Ho; ++i)
      for (std::size_t j = 0; j < Wo; ++j) {
        const double* base = xv.data() + (c * H + 2 * i) * W + 2 * j;
        y[(c * Ho + i) * Wo + j] = 0.25 * (base[0] + base[1] + base[W] + base[W + 1]);
      }
  return make_op("avg_pool2", {C, Ho, Wo}, std::move(y), {x}, [C, H, W, Ho, Wo](detail::Node& n) {
    auto& dst = n.inputs[0]->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          const double g = 0.25 * n.grad[(c * Ho + i) * Wo + j];
          double* base = dst.data() + (c * H + 2 * i) * W + 2 * j;
          base[0] += g;
          base[1] += g;
          base[W] += g;
          base[W + 1] += g;
        }
  });
}

Tensor conv2d_transpose2x(const Tensor& x, const Tensor& w, std::size_t pad) {
  return conv2d(zero_insert2(x), w, pad);
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

namespace {

// Two central-difference estimates at step eps and eps/2. For a smooth f they
// agree to O(eps^2); a large gap means the step crossed a kink and neither
// estimate is the derivative.
inline bool fd_estimates_disagree(double fd, double fd_half) {
  return std::fabs(fd - fd_half) > 1e-6 * std::max(1.0, std::fabs(fd_half));
}

}  // namespace

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps,
                  const std::function<bool(std::size_t, double)>& skip, bool filter_kinks) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
  }
  std::vector<double> base(x.values().begin(), x.values().end());
  Tensor leaf = Tensor::from_data(x.shape(), base).set_requires_grad(true);
  Tensor y = f(leaf);
  if (y.size() != 1) throw std::invalid_argument("grad_check: f must return a scalar");
  y.backward();
  std::vector<double> analytic(base.size(), 0.0);
  if (leaf.has_grad()) {
    auto g = leaf.grad();
    analytic.assign(g.begin(), g.end());
  }

  double worst = 0.0;
  NoGradGuard guard;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (skip && skip(i, base[i])) continue;
    auto probe = [&](double v) {
      std::vector<double> d = base;
      d[i] = v;
      const double out = f(Tensor::from_data(x.shape(), std::move(d))).item();
      if (!std::isfinite(out)) {
        throw NumericError("grad_check: f is non-finite near x");
      }
      return out;
    };
    const double fd = (probe(base[i] + eps) - probe(base[i] - eps)) / (2.0 * eps);
    if (filter_kinks) {
      const double fd_half =
          (probe(base[i] + 0.5 * eps) - probe(base[i] - 0.5 * eps)) / eps;
      if (fd_estimates_disagree(fd, fd_half)) continue;
    }
    const double err = std::fabs(analytic[i] - fd) / std::max(1.0, std::fabs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double param_grad_check(const std::function<Tensor()>& forward, Tensor& param, double eps,
                        const std::function<bool(std::size_t, double)>& skip,
                        bool filter_kinks) {
  if (!(eps >= 1e-6 && eps <= 1e-3)) {
    throw std::invalid_argument("param_grad_check: eps must lie in [1e-6, 1e-3]");
  }
  param.zero_grad();
  Tensor y = forward();
  if (y.size() != 1) throw std::invalid_argument("param_grad_check: forward must be scalar");
  y.backward();
  std::vector<double> analytic(param.size(), 0.0);
  if (param.has_grad()) {
    auto g = param.grad();
    analytic.assign(g.begin(), g.end());
  }

  auto vals = param.values_mut();
  double worst = 0.0;
  NoGradGuard guard;
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double saved = vals[i];
    if (skip && skip(i, saved)) continue;
    vals[i] = saved + eps;
    const double y1 = forward().item();
    vals[i] = saved - eps;
    const double y2 = forward().item();
    vals[i] = saved;
    if (!std::isfinite(y1) || !std::isfinite(y2)) {
      throw NumericError("param_grad_check: forward is non-finite near the current params");
    }
    const double fd = (y1 - y2) / (2.0 * eps);
    if (filter_kinks) {
      vals[i] = saved + 0.5 * eps;
      const double h1 = forward().item();
      vals[i] = saved - 0.5 * eps;
      const double h2 = forward().item();
      vals[i] = saved;
      const double fd_half = (h1 - h2) / eps;
      if (fd_estimates_disagree(fd, fd_half)) continue;
    }
    const double err = std::fabs(analytic[i] - fd) / std::max(1.0, std::fabs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace msgv
