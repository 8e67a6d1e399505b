#include "msgv/gradcheck_suite.hpp"

#include <cmath>
#include <cstring>
#include <functional>

#include "msgv/errors.hpp"
#include "msgv/modconv.hpp"
#include "msgv/networks.hpp"
#include "msgv/rng.hpp"
#include "msgv/styles.hpp"
#include "msgv/tensor.hpp"
#include "msgv/training.hpp"

namespace msgv {

namespace {

constexpr double kEps = 1e-4;
constexpr double kTol = 1e-4;

// Skips entries too close to a kink for central differences to be trusted.
std::function<bool(std::size_t, double)> skip_near(double margin) {
  return [margin](std::size_t, double v) { return std::fabs(v) < margin; };
}

// Checks every stride-th entry; keeps whole-model sweeps affordable while
// still touching every parameter tensor.
std::function<bool(std::size_t, double)> stride_skip(std::size_t numel, std::size_t keep) {
  const std::size_t stride = numel <= keep ? 1 : (numel + keep - 1) / keep;
  return [stride](std::size_t i, double) { return (i % stride) != 0; };
}

struct Suite {
  std::vector<GradCheckCase> cases;
  Rng rng{20240u};

  void input_case(const std::string& name, const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& x, const std::function<bool(std::size_t, double)>& skip = nullptr,
                  double tol = kTol) {
    GradCheckCase c;
    c.name = name;
    c.tolerance = tol;
    c.max_rel_err = grad_check(f, x, kEps, skip, /*filter_kinks=*/true);
    c.pass = c.max_rel_err <= tol;
    cases.push_back(std::move(c));
  }

  void param_case(const std::string& name, const std::function<Tensor()>& forward, Tensor& p,
                  std::size_t keep = 8, double tol = kTol) {
    GradCheckCase c;
    c.name = name;
    c.tolerance = tol;
    c.max_rel_err = param_grad_check(forward, p, kEps, stride_skip(p.size(), keep),
                                     /*filter_kinks=*/true);
    c.pass = c.max_rel_err <= tol;
    cases.push_back(std::move(c));
  }

  Tensor randn(Shape shape, double stddev = 1.0) { return Tensor::randn(shape, rng, stddev); }
  Tensor randpos(Shape shape) {
    Tensor t = Tensor::randn(shape, rng);
    auto v = t.values_mut();
    for (double& x : v) x = 0.5 + std::fabs(x);
    return t;
  }
};

void add_op_cases(Suite& s) {
  Tensor a = s.randn({3, 4});
  Tensor b = s.randn({3, 4});
  Tensor row = s.randn({4});

  s.input_case("add", [&](const Tensor& x) { return sum_all(add(x, b)); }, a);
  s.input_case("add_broadcast", [&](const Tensor& x) { return sum_all(add(a, x)); }, row);
  s.input_case("sub", [&](const Tensor& x) { return sum_all(sub(x, b)); }, a);
  s.input_case("mul", [&](const Tensor& x) { return sum_all(mul(x, b)); }, a);
  s.input_case("mul_broadcast", [&](const Tensor& x) { return sum_all(mul(a, x)); }, row);
  s.input_case("neg", [&](const Tensor& x) { return sum_all(neg(x)); }, a);
  s.input_case("add_scalar", [&](const Tensor& x) { return sum_all(add_scalar(x, 1.7)); }, a);
  s.input_case("mul_scalar", [&](const Tensor& x) { return sum_all(mul_scalar(x, -2.3)); }, a);
  s.input_case("abs", [&](const Tensor& x) { return sum_all(mul(abs_t(x), b)); }, a,
               skip_near(1e-2));
  s.input_case("sqrt", [&](const Tensor& x) { return sum_all(sqrt_t(x)); }, s.randpos({3, 4}));
  s.input_case("rsqrt", [&](const Tensor& x) { return sum_all(rsqrt(x)); }, s.randpos({3, 4}));
  s.input_case("exp", [&](const Tensor& x) { return sum_all(exp_t(x)); }, a);
  s.input_case("log", [&](const Tensor& x) { return sum_all(log_t(x)); }, s.randpos({3, 4}));
  s.input_case("sin", [&](const Tensor& x) { return sum_all(sin_t(x)); }, a);
  s.input_case("tanh", [&](const Tensor& x) { return sum_all(mul(tanh_t(x), b)); }, a);
  s.input_case("softplus", [&](const Tensor& x) { return sum_all(softplus(x)); }, a);
  s.input_case("leaky_relu", [&](const Tensor& x) { return sum_all(mul(leaky_relu(x), b)); }, a,
               skip_near(1e-2));

  // probes are drawn once up front: redrawing inside the closures would give
  // the finite-difference passes a different objective than the backward pass
  Tensor p43 = s.randn({4, 3});
  Tensor p3 = s.randn({3});
  Tensor p64 = s.randn({6, 4});
  Tensor p32 = s.randn({3, 2});
  s.input_case("reshape", [&](const Tensor& x) { return sum_all(mul(reshape(x, {4, 3}), p43)); },
               a);
  s.input_case("transpose2", [&](const Tensor& x) { return sum_all(mul(transpose2(x), p43)); },
               a);
  s.input_case("broadcast_to",
               [&](const Tensor& x) { return sum_all(mul(broadcast_to(x, {3, 4}), b)); }, row);
  s.input_case("sum_all", [&](const Tensor& x) { return sum_all(x); }, a);
  s.input_case("mean_all", [&](const Tensor& x) { return mean_all(x); }, a);
  s.input_case("sum_axis0", [&](const Tensor& x) { return sum_all(mul(sum_axis(x, 0), row)); }, a);
  s.input_case("mean_axis1",
               [&](const Tensor& x) { return sum_all(mul(mean_axis(x, 1), p3)); }, a);
  s.input_case("concat",
               [&](const Tensor& x) { return sum_all(mul(concat({x, b}, 0), p64)); }, a);
  s.input_case("slice", [&](const Tensor& x) { return sum_all(mul(slice(x, 1, 1, 2), p32)); }, a);

  Tensor m1 = s.randn({3, 5});
  Tensor m2 = s.randn({5, 2});
  Tensor p34 = s.randn({3, 4});
  s.input_case("matmul_lhs",
               [&](const Tensor& x) { return sum_all(mul(matmul(x, m2), p32)); }, m1);
  s.input_case("matmul_rhs",
               [&](const Tensor& x) { return sum_all(mul(matmul(m1, x), p32)); }, m2);
  s.input_case("outer",
               [&](const Tensor& x) { return sum_all(mul(outer(x, row), p34)); }, s.randn({3}));
  s.input_case("softmax",
               [&](const Tensor& x) { return sum_all(mul(softmax(x, 1), b)); }, a);

  Tensor x1 = s.randn({2, 6});
  Tensor w1 = s.randn({3, 2, 3});
  Tensor p36 = s.randn({3, 6});
  s.input_case("conv1d_x",
               [&](const Tensor& x) { return sum_all(mul(conv1d(x, w1, 1), p36)); }, x1);
  s.input_case("conv1d_w",
               [&](const Tensor& x) { return sum_all(mul(conv1d(x1, x, 1), p36)); }, w1);

  Tensor x2 = s.randn({2, 5, 5});
  Tensor w2 = s.randn({3, 2, 3, 3});
  Tensor p355 = s.randn({3, 5, 5});
  Tensor p21010 = s.randn({2, 10, 10});
  s.input_case("conv2d_x",
               [&](const Tensor& x) { return sum_all(mul(conv2d(x, w2, 1), p355)); }, x2);
  s.input_case("conv2d_w",
               [&](const Tensor& x) { return sum_all(mul(conv2d(x2, x, 1), p355)); }, w2);
  s.input_case("nearest_upsample2",
               [&](const Tensor& x) { return sum_all(mul(nearest_upsample2(x), p21010)); }, x2);
  s.input_case("zero_insert2",
               [&](const Tensor& x) { return sum_all(mul(zero_insert2(x), p21010)); }, x2);
  Tensor x4 = s.randn({2, 4, 4});
  Tensor p222 = s.randn({2, 2, 2});
  Tensor p388 = s.randn({3, 8, 8});
  s.input_case("avg_pool2",
               [&](const Tensor& x) { return sum_all(mul(avg_pool2(x), p222)); }, x4);
  s.input_case("conv2d_transpose2x",
               [&](const Tensor& x) { return sum_all(mul(conv2d_transpose2x(x, w2, 1), p388)); },
               x4);
}

void add_layer_cases(Suite& s) {
  const std::size_t c_out = 5, c_in = 4, kh = 3, kw = 3, K = 3, R = 2;
  Tensor W = s.randn({c_out, c_in, kh, kw});
  Tensor style = s.randn({static_cast<std::size_t>(R), c_in + kh + kw});
  Tensor probe = s.randn({c_in, kh, kw});
  s.input_case("lowrank_reconstruct",
               [&](const Tensor& x) {
                 return sum_all(mul(lowrank_reconstruct(x, c_in, kh, kw), probe));
               },
               style);

  Tensor sv = s.randn({c_in});
  Tensor wprobe = s.randn({c_out, c_in, kh, kw});
  s.input_case("content_modulate_w",
               [&](const Tensor& x) { return sum_all(mul(content_modulate(x, sv), wprobe)); }, W);
  s.input_case("content_modulate_s",
               [&](const Tensor& x) { return sum_all(mul(content_modulate(W, x), wprobe)); }, sv);

  Tensor M = s.randn({K, c_in * kh * kw});
  Tensor aprobe = s.randn({c_out, c_in * kh * kw});
  s.input_case("mostatt_w",
               [&](const Tensor& x) { return sum_all(mul(mostatt(x, M).attended, aprobe)); }, W);
  s.input_case("mostatt_m",
               [&](const Tensor& x) { return sum_all(mul(mostatt(W, x).attended, aprobe)); }, M);

  for (bool demod : {false, true}) {
    for (ModStrategy strat : {ModStrategy::ContentFirst, ModStrategy::MotionFirst}) {
      Tensor wl = s.randn({c_out, c_in, kh, kw});
      Tensor bl = s.randn({c_out});
      Tensor xin = s.randn({c_in, 4, 4});
      Tensor rows = s.randn({K, c_in * kh * kw});
      Tensor oprobe = s.randn({c_out, 4, 4});
      const std::string tag = std::string(demod ? "demod" : "plain") + "_" +
                              (strat == ModStrategy::ContentFirst ? "content_first"
                                                                  : "motion_first");
      s.input_case("modconv_x_" + tag,
                   [&](const Tensor& x) {
                     return sum_all(mul(modconv_forward(x, wl, bl, sv, rows, strat, demod).y,
                                        oprobe));
                   },
                   xin);
      s.input_case("modconv_w_" + tag,
                   [&](const Tensor& x) {
                     return sum_all(mul(modconv_forward(xin, x, bl, sv, rows, strat, demod).y,
                                        oprobe));
                   },
                   wl);
      s.input_case("modconv_style_" + tag,
                   [&](const Tensor& x) {
                     return sum_all(mul(modconv_forward(xin, wl, bl, x, rows, strat, demod).y,
                                        oprobe));
                   },
                   sv);
      s.input_case("modconv_rows_" + tag,
                   [&](const Tensor& x) {
                     return sum_all(mul(modconv_forward(xin, wl, bl, sv, x, strat, demod).y,
                                        oprobe));
                   },
                   rows);
    }
  }

  // Style hypernetwork chain and motion encoder, parameters included.
  StyleConfig sc;
  sc.d_c = 6;
  sc.mapping_layers = 2;
  sc.d_v = 4;
  sc.motion_mlp_width = 8;
  sc.K = K;
  sc.d_m = 5;
  sc.d_h = 6;
  sc.R = 1;
  Rng srng(7);
  StyleHypernet hyper(sc, srng);
  const std::size_t lid = hyper.register_layer({c_out, c_in, kh, kw});
  Tensor z = s.randn({6});
  Tensor v = s.randn({4});
  Tensor rprobe = s.randn({K, c_in * kh * kw});
  auto style_chain = [&](const Tensor& zz) {
    Tensor w = hyper.map_content(zz);
    Tensor m = hyper.motion_vectors(w, v);
    return sum_all(mul(hyper.modulation_rows(hyper.hyper_styles(m, lid), lid), rprobe));
  };
  s.input_case("style_chain_z", style_chain, z);
  {
    std::vector<NamedParam> ps;
    hyper.collect_params(ps, "styles.");
    auto forward = [&] { return style_chain(z); };
    for (auto& p : ps) s.param_case("param_" + p.name, forward, p.tensor, 4);
  }

  MotionEncoderConfig mc;
  mc.d_z = 4;
  mc.waves = 4;
  mc.conv_channels = 5;
  mc.conv_layers = 1;
  mc.kernel = 3;
  Rng mrng(8);
  MotionEncoder enc(mc, mrng);
  auto track = sample_motion_noise(77, 3, 4, 8.0);
  Tensor vprobe = s.randn({4});
  {
    std::vector<NamedParam> ps;
    enc.collect_params(ps, "motion.");
    auto forward = [&] { return sum_all(mul(enc.motion_code(track, 3.7), vprobe)); };
    for (auto& p : ps) s.param_case("param_" + p.name, forward, p.tensor, 4);
  }
}

// Criterion config: 16-pixel frames, 4 motion styles.
void add_full_cases(Suite& s) {
  GeneratorConfig gc;
  gc.resolution = 16;
  gc.const_channels = 8;
  gc.channels = {10, 8};
  StyleConfig sc;
  sc.d_c = 10;
  sc.mapping_layers = 2;
  sc.d_v = 6;
  sc.motion_mlp_width = 16;
  sc.K = 4;
  sc.d_m = 8;
  sc.d_h = 10;
  sc.R = 1;
  MotionEncoderConfig mc;
  mc.d_z = 6;
  mc.waves = 6;
  mc.conv_channels = 6;
  mc.conv_layers = 1;
  mc.kernel = 5;
  DiscriminatorConfig dc;
  dc.resolution = 16;
  dc.channels = {8, 10};
  dc.items = 3;  // 2 frames + 1 difference
  dc.global_dim = 8;
  dc.time_freqs = 3;

  Rng grng(101);
  Generator gen(gc, sc, mc, grng);
  Rng drng(202);
  Discriminator disc(dc, drng);

  Tensor z = s.randn({sc.d_c});
  auto track = sample_motion_noise(55, 3, mc.d_z, 8.0);
  const std::vector<double> times = {0.0, 2.0};

  // Generator-side loss: non-saturating adversarial term plus the diversity
  // penalty, the same composition the training step uses.
  auto gen_loss = [&](const Tensor& zz) {
    auto res = gen.generate_clip(zz, track, times);
    auto seq = frame_differences(res.frames, res.times);
    Tensor logit = disc.discriminate(seq.items, seq.times);
    Tensor adv = softplus(neg(logit));
    Tensor div = diversity_loss({res.records});
    return add(adv, div);
  };
  s.input_case("full_gen_loss_z", gen_loss, z);

  auto gen_forward = [&] { return gen_loss(z); };
  {
    std::vector<NamedParam> ps;
    gen.collect_params(ps, "g.");
    for (auto& p : ps) s.param_case("param_" + p.name, gen_forward, p.tensor, 6);
  }

  // Discriminator-side loss on a fixed fake/real pair.
  Tensor fake_frame_0 = s.randn({3, 16, 16}, 0.5);
  Tensor fake_frame_1 = s.randn({3, 16, 16}, 0.5);
  auto disc_forward = [&] {
    auto seq = frame_differences({fake_frame_0, fake_frame_1}, times);
    Tensor l_f = disc.discriminate(seq.items, seq.times);
    // reuse the same clip as a stand-in real; the loss still exercises both
    // softplus branches
    Tensor l_r = disc.discriminate(seq.items, seq.times);
    return add(softplus(l_f), softplus(neg(l_r)));
  };
  {
    std::vector<NamedParam> ps;
    disc.collect_params(ps, "d.");
    for (auto& p : ps) s.param_case("param_" + p.name, disc_forward, p.tensor, 6);
  }
  s.input_case("full_disc_loss_frame",
               [&](const Tensor& x) {
                 auto seq = frame_differences({x, fake_frame_1}, times);
                 return softplus(disc.discriminate(seq.items, seq.times));
               },
               fake_frame_0, nullptr, kTol);
}

void add_sign_flip_case(Suite& s) {
  Tensor x = s.randn({4});
  auto broken = [](const Tensor& in) {
    std::vector<double> v(in.values().begin(), in.values().end());
    for (double& e : v) e *= 2.0;
    return make_op("sign_flip_fixture", in.shape(), std::move(v), {in},
                   [](detail::Node& n) {
                     // wrong on purpose: pushes -2*g instead of +2*g
                     std::vector<double> g(n.grad.size());
                     for (std::size_t i = 0; i < g.size(); ++i) g[i] = -2.0 * n.grad[i];
                     n.inputs[0]->accumulate(g);
                   });
  };
  GradCheckCase c;
  c.name = "sign_flip_fixture";
  c.tolerance = kTol;
  c.max_rel_err = grad_check([&](const Tensor& in) { return sum_all(broken(in)); }, x, kEps);
  c.pass = c.max_rel_err <= c.tolerance;
  s.cases.push_back(std::move(c));
}

}  // namespace

GradScope grad_scope_from_name(const std::string& name) {
  if (name == "ops") return GradScope::Ops;
  if (name == "layer") return GradScope::Layer;
  if (name == "full") return GradScope::Full;
  throw ConfigError("unknown gradcheck scope '" + name + "' (expected ops, layer or full)");
}

GradCheckReport run_gradcheck(GradScope scope, bool inject_sign_flip) {
  Suite s;
  switch (scope) {
    case GradScope::Ops:
      add_op_cases(s);
      break;
    case GradScope::Layer:
      add_layer_cases(s);
      break;
    case GradScope::Full:
      add_full_cases(s);
      break;
  }
  if (inject_sign_flip) add_sign_flip_case(s);

  GradCheckReport report;
  report.cases = std::move(s.cases);
  for (std::size_t i = 0; i < report.cases.size(); ++i) {
    if (!report.cases[i].pass) report.all_pass = false;
    if (report.cases[i].max_rel_err > report.cases[report.worst].max_rel_err) report.worst = i;
  }
  return report;
}

}  // namespace msgv
