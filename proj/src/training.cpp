#include "msgv/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <span>
#include <stdexcept>
#include <unordered_map>
#include <utility>

#include "msgv/errors.hpp"

namespace msgv {

std::string MetricsRow::csv() const {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g",
                static_cast<unsigned long long>(step), loss_d, loss_g, l_div, r1,
                grad_norm_g, grad_norm_d);
  return std::string(buf);
}

Adam::Adam(std::vector<NamedParam> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape()));
    v_.push_back(Tensor::zeros(p.tensor.shape()));
  }
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i].tensor;
    std::span<const double> g = p.has_grad() ? p.grad() : std::span<const double>();
    auto m = m_[i].values_mut();
    auto v = v_[i].values_mut();
    auto w = p.values_mut();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g.empty() ? 0.0 : g[j];
      m[j] = b1_ * m[j] + (1.0 - b1_) * gj;
      v[j] = b2_ * v[j] + (1.0 - b2_) * gj * gj;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      w[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
    }
  }
}

void Adam::zero_grads() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double Adam::grad_norm() const {
  double sq = 0.0;
  for (const auto& p : params_) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void Adam::collect_state(std::vector<std::pair<std::string, Tensor>>& out) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(params_[i].name + ".adam_m", m_[i]);
    out.emplace_back(params_[i].name + ".adam_v", v_[i]);
  }
}

Tensor diversity_loss(const std::vector<std::vector<AttentionRecord>>& records,
                      bool identity_target) {
  if (records.empty() || records.front().empty()) return Tensor::scalar(0.0);
  const std::size_t T = records.size();
  const std::size_t L = records.front().size();
  for (const auto& frame : records) {
    if (frame.size() != L)
      throw std::invalid_argument("diversity_loss: ragged attention records");
  }
  Tensor acc;
  for (std::size_t l = 0; l < L; ++l) {
    Tensor layer_sum;
    for (std::size_t t = 0; t < T; ++t) {
      const Tensor& A = records[t][l].logits;  // (c_out, K)
      Tensor gram = matmul(transpose2(A), A);  // (K, K)
      if (identity_target) {
        const std::size_t K = A.shape()[1];
        std::vector<double> eye(K * K, 0.0);
        for (std::size_t k = 0; k < K; ++k) eye[k * K + k] = 1.0;
        gram = sub(gram, Tensor::from_data({K, K}, eye));
      }
      // tiny shift keeps sqrt differentiable at a zero gram; the value error
      // (<= 1e-15) is far below every stated tolerance
      Tensor fro = sqrt_t(add_scalar(sum_all(mul(gram, gram)), 1e-30));
      layer_sum = layer_sum.defined() ? add(layer_sum, fro) : fro;
    }
    Tensor layer_mean = mul_scalar(layer_sum, 1.0 / static_cast<double>(T));
    acc = acc.defined() ? add(acc, layer_mean) : layer_mean;
  }
  return mul_scalar(acc, 1.0 / static_cast<double>(L));
}

std::pair<Tensor, Tensor> adversarial_losses(const Tensor& logit_real,
                                             const Tensor& logit_fake) {
  if (logit_real.size() != 1 || logit_fake.size() != 1)
    throw std::invalid_argument("adversarial_losses: logits must be scalars");
  Tensor loss_d = add(softplus(logit_fake), softplus(neg(logit_real)));
  Tensor loss_g = softplus(neg(logit_fake));
  return {loss_d, loss_g};
}

R1Out r1_penalty_fn(const std::function<Tensor(const std::vector<Tensor>&)>& logit_fn,
                    const std::vector<Tensor>& frames, double fd_eps) {
  if (frames.empty()) throw std::invalid_argument("r1_penalty: no frames");
  // Exact penalty value from an input-gradient pass on leaf copies. Note this
  // backward also deposits incidental gradients on the model weights; the
  // caller must clear those before accumulating the real loss.
  std::vector<Tensor> leaves;
  leaves.reserve(frames.size());
  for (const Tensor& f : frames) {
    Tensor leaf = Tensor::from_data(f.shape(),
                                    std::vector<double>(f.values().begin(), f.values().end()));
    leaf.set_requires_grad(true);
    leaves.push_back(leaf);
  }
  Tensor logit = logit_fn(leaves);
  if (logit.size() != 1)
    throw std::invalid_argument("r1_penalty: logit function must return a scalar");
  logit.backward();

  double gsq = 0.0;
  for (const Tensor& leaf : leaves) {
    if (!leaf.has_grad()) continue;
    for (double g : leaf.grad()) gsq += g * g;
  }
  R1Out out;
  out.value = 0.5 * gsq;
  const double gnorm = std::sqrt(gsq);
  if (gnorm < 1e-12) {
    out.surrogate = Tensor::scalar(0.0);
    return out;
  }

  // Parameter-side gradient: central difference of the logit along the unit
  // input-gradient direction, scaled by ||g||. Its gradient w.r.t. the weights
  // equals d/dtheta <grad_x D, stop_grad(grad_x D)> up to O(fd_eps^2), which is
  // exactly the R1 parameter gradient.
  std::vector<Tensor> plus, minus;
  plus.reserve(frames.size());
  minus.reserve(frames.size());
  for (const Tensor& leaf : leaves) {
    std::vector<double> hi(leaf.values().begin(), leaf.values().end());
    std::vector<double> lo(hi);
    if (leaf.has_grad()) {
      const auto& g = leaf.grad();
      for (std::size_t i = 0; i < hi.size(); ++i) {
        const double d = fd_eps * g[i] / gnorm;
        hi[i] += d;
        lo[i] -= d;
      }
    }
    plus.push_back(Tensor::from_data(leaf.shape(), hi));
    minus.push_back(Tensor::from_data(leaf.shape(), lo));
  }
  Tensor diff = sub(logit_fn(plus), logit_fn(minus));
  out.surrogate = mul_scalar(diff, gnorm / (2.0 * fd_eps));
  return out;
}

R1Out r1_penalty(const Discriminator& disc, const std::vector<Tensor>& frames,
                 const std::vector<double>& times, bool motion_diff, double fd_eps) {
  auto logit_fn = [&](const std::vector<Tensor>& xs) {
    if (motion_diff) {
      ItemSequence seq = frame_differences(xs, times);
      return disc.discriminate(seq.items, seq.times);
    }
    return disc.discriminate(xs, times);
  };
  return r1_penalty_fn(logit_fn, frames, fd_eps);
}

std::vector<double> sample_clip_times(Rng& rng, std::size_t clip_length, std::size_t T,
                                      std::size_t max_gap) {
  if (T == 0) throw std::invalid_argument("sample_clip_times: T must be positive");
  if (clip_length < T)
    throw std::invalid_argument("sample_clip_times: clip shorter than requested frames");
  if (max_gap == 0) throw std::invalid_argument("sample_clip_times: max_gap must be >= 1");
  std::vector<double> times(T);
  // leave room for the remaining T-1 minimum gaps of 1
  std::uint64_t t = rng.uniform_int(0, static_cast<std::uint64_t>(clip_length - T));
  times[0] = static_cast<double>(t);
  for (std::size_t j = 1; j < T; ++j) {
    std::uint64_t gap = rng.uniform_int(1, static_cast<std::uint64_t>(max_gap));
    std::uint64_t limit = static_cast<std::uint64_t>(clip_length - 1 - (T - 1 - j));
    t = std::min(t + gap, limit);
    times[j] = static_cast<double>(t);
  }
  return times;
}

Trainer::Trainer(Setup setup)
    : setup_(std::move(setup)),
      model_rng_(setup_.train.model_seed),
      data_rng_(setup_.train.data_seed),
      gen_(setup_.gen, setup_.style, setup_.motion, model_rng_),
      disc_(setup_.disc, model_rng_),
      opt_g_([this] {
        std::vector<NamedParam> ps;
        gen_.collect_params(ps, "g.");
        return ps;
      }(), setup_.train.lr_g),
      opt_d_([this] {
        std::vector<NamedParam> ps;
        disc_.collect_params(ps, "d.");
        return ps;
      }(), setup_.train.lr_d) {
  const TrainConfig& tc = setup_.train;
  if (tc.frames_per_clip < 2 && tc.motion_diff)
    throw ConfigError("frames_per_clip must be >= 2 when motion differences are enabled");
  if (tc.lambda_div < 0 || tc.lambda_r1 < 0)
    throw ConfigError("loss weights must be non-negative");
  if (tc.clip_length < tc.frames_per_clip)
    throw ConfigError("clip_length must be >= frames_per_clip");
  if (tc.r1_interval == 0) throw ConfigError("r1_interval must be >= 1");
  if (setup_.dataset.empty()) throw ConfigError("training dataset is empty");
  if (setup_.gen.resolution != setup_.disc.resolution)
    throw ConfigError("generator and discriminator resolutions differ");
  const std::size_t want_items =
      tc.motion_diff ? 2 * tc.frames_per_clip - 1 : tc.frames_per_clip;
  if (setup_.disc.items != want_items)
    throw ConfigError("discriminator item arity does not match frames_per_clip");
  for (const SceneSpec& s : setup_.dataset) {
    if (s.resolution != setup_.gen.resolution)
      throw ConfigError("dataset resolution does not match the generator");
  }
}

Tensor Trainer::run_discriminator(const std::vector<Tensor>& frames,
                                  const std::vector<double>& times) const {
  if (setup_.train.motion_diff) {
    ItemSequence seq = frame_differences(frames, times);
    return disc_.discriminate(seq.items, seq.times);
  }
  return disc_.discriminate(frames, times);
}

std::vector<Tensor> Trainer::render_real(const SceneSpec& spec,
                                         const std::vector<double>& times) const {
  std::vector<Tensor> frames;
  frames.reserve(times.size());
  for (double t : times) frames.push_back(render_frame(spec, t));
  return frames;
}

MetricsRow Trainer::train_step() {
  const TrainConfig& tc = setup_.train;
  MetricsRow row;
  row.step = step_;
  const bool r1_due = tc.lambda_r1 > 0 && (step_ % tc.r1_interval == 0);

  auto check_finite = [this](double x, const char* term) {
    if (!std::isfinite(x)) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s is non-finite at step %llu", term,
                    static_cast<unsigned long long>(step_));
      throw NumericError(buf);
    }
  };

  // ---- discriminator step ----
  std::vector<std::vector<Tensor>> real_frames(tc.batch);
  std::vector<std::vector<double>> real_times(tc.batch);
  for (std::size_t b = 0; b < tc.batch; ++b) {
    const SceneSpec& spec =
        setup_.dataset[data_rng_.uniform_int(0, setup_.dataset.size() - 1)];
    real_times[b] = sample_clip_times(data_rng_, tc.clip_length, tc.frames_per_clip,
                                      tc.max_gap);
    real_frames[b] = render_real(spec, real_times[b]);
  }
  std::vector<std::vector<Tensor>> fake_frames(tc.batch);
  std::vector<std::vector<double>> fake_times(tc.batch);
  for (std::size_t b = 0; b < tc.batch; ++b) {
    Tensor z = Tensor::randn({setup_.style.d_c}, model_rng_);
    std::uint64_t track_seed = model_rng_.next_u64();
    fake_times[b] = sample_clip_times(data_rng_, tc.clip_length, tc.frames_per_clip,
                                      tc.max_gap);
    NoGradGuard stop;  // generator is frozen during the D step
    MotionNoiseTrack track = sample_motion_noise(track_seed, tc.num_anchors,
                                                 setup_.motion.d_z, tc.anchor_spacing);
    fake_frames[b] = gen_.generate_clip(z, track, fake_times[b]).frames;
  }

  Tensor r1_term;
  if (r1_due) {
    double r1_sum = 0.0;
    for (std::size_t b = 0; b < tc.batch; ++b) {
      R1Out r1 = r1_penalty(disc_, real_frames[b], real_times[b], tc.motion_diff);
      r1_sum += r1.value;
      r1_term = r1_term.defined() ? add(r1_term, r1.surrogate) : r1.surrogate;
    }
    row.r1 = r1_sum / static_cast<double>(tc.batch);
    check_finite(row.r1, "r1");
    // drop the incidental weight gradients from the input-gradient passes
    opt_d_.zero_grads();
  }

  Tensor loss_d;
  for (std::size_t b = 0; b < tc.batch; ++b) {
    Tensor logit_real = run_discriminator(real_frames[b], real_times[b]);
    Tensor logit_fake = run_discriminator(fake_frames[b], fake_times[b]);
    Tensor term = adversarial_losses(logit_real, logit_fake).first;
    loss_d = loss_d.defined() ? add(loss_d, term) : term;
  }
  loss_d = mul_scalar(loss_d, 1.0 / static_cast<double>(tc.batch));
  row.loss_d = loss_d.item();
  check_finite(row.loss_d, "loss_d");
  if (r1_due) {
    // lazy regularization: applied every r1_interval steps, scaled to keep the
    // effective strength of a per-step penalty
    double scale = tc.lambda_r1 * static_cast<double>(tc.r1_interval) /
                   static_cast<double>(tc.batch);
    loss_d = add(loss_d, mul_scalar(r1_term, scale));
  }
  loss_d.backward();
  row.grad_norm_d = opt_d_.grad_norm();
  opt_d_.step();
  opt_d_.zero_grads();
  opt_g_.zero_grads();  // the fake pass was no-grad, but keep the invariant cheaply

  // ---- generator step ----
  Tensor loss_g_adv;
  Tensor l_div;
  for (std::size_t b = 0; b < tc.batch; ++b) {
    Tensor z = Tensor::randn({setup_.style.d_c}, model_rng_);
    std::uint64_t track_seed = model_rng_.next_u64();
    std::vector<double> times = sample_clip_times(data_rng_, tc.clip_length,
                                                  tc.frames_per_clip, tc.max_gap);
    MotionNoiseTrack track = sample_motion_noise(track_seed, tc.num_anchors,
                                                 setup_.motion.d_z, tc.anchor_spacing);
    GenerateResult res = gen_.generate_clip(z, track, times);
    Tensor logit_fake = run_discriminator(res.frames, times);
    Tensor term = softplus(neg(logit_fake));
    loss_g_adv = loss_g_adv.defined() ? add(loss_g_adv, term) : term;
    Tensor div = diversity_loss(res.records, tc.div_identity_target);
    l_div = l_div.defined() ? add(l_div, div) : div;
  }
  loss_g_adv = mul_scalar(loss_g_adv, 1.0 / static_cast<double>(tc.batch));
  l_div = mul_scalar(l_div, 1.0 / static_cast<double>(tc.batch));
  row.loss_g = loss_g_adv.item();
  row.l_div = l_div.item();
  check_finite(row.loss_g, "loss_g");
  check_finite(row.l_div, "l_div");
  Tensor loss_g = tc.lambda_div > 0
                      ? add(loss_g_adv, mul_scalar(l_div, tc.lambda_div))
                      : loss_g_adv;
  loss_g.backward();
  row.grad_norm_g = opt_g_.grad_norm();
  opt_g_.step();
  opt_g_.zero_grads();
  opt_d_.zero_grads();  // G backward also reached the discriminator weights

  ++step_;
  return row;
}

CheckpointData Trainer::snapshot() const {
  CheckpointData d;
  d.step = step_;
  d.rng_states.emplace_back("model", model_rng_.state());
  d.rng_states.emplace_back("data", data_rng_.state());
  d.config_echo = setup_.config_echo;
  for (const auto& p : opt_g_.params()) d.tensors.emplace_back(p.name, p.tensor);
  for (const auto& p : opt_d_.params()) d.tensors.emplace_back(p.name, p.tensor);
  opt_g_.collect_state(d.tensors);
  opt_d_.collect_state(d.tensors);
  d.tensors.emplace_back("opt_g.t", Tensor::scalar(static_cast<double>(opt_g_.t())));
  d.tensors.emplace_back("opt_d.t", Tensor::scalar(static_cast<double>(opt_d_.t())));
  return d;
}

void Trainer::save(const std::string& path) const { write_checkpoint(path, snapshot()); }

void Trainer::restore(const CheckpointData& data) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : data.tensors) by_name[name] = &t;
  auto copy_into = [&](Tensor& dst, const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint missing tensor '" + name + "'");
    if (it->second->shape() != dst.shape())
      throw IoError("checkpoint tensor '" + name + "' has mismatched shape");
    auto src = it->second->values();
    auto out = dst.values_mut();
    std::copy(src.begin(), src.end(), out.begin());
  };
  auto fetch_scalar = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint missing tensor '" + name + "'");
    return it->second->item();
  };

  for (auto& p : opt_g_.params()) copy_into(p.tensor, p.name);
  for (auto& p : opt_d_.params()) copy_into(p.tensor, p.name);
  std::vector<std::pair<std::string, Tensor>> moments;  // tensors share storage
  opt_g_.collect_state(moments);
  opt_d_.collect_state(moments);
  for (auto& [name, t] : moments) copy_into(t, name);
  opt_g_.set_t(static_cast<std::uint64_t>(fetch_scalar("opt_g.t")));
  opt_d_.set_t(static_cast<std::uint64_t>(fetch_scalar("opt_d.t")));

  for (const auto& [name, state] : data.rng_states) {
    if (name == "model")
      model_rng_.set_state(state);
    else if (name == "data")
      data_rng_.set_state(state);
  }
  step_ = data.step;
  if (!data.config_echo.empty()) setup_.config_echo = data.config_echo;
}

}  // namespace msgv
