#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "msgv/checkpoint.hpp"
#include "msgv/modconv.hpp"
#include "msgv/networks.hpp"
#include "msgv/params.hpp"
#include "msgv/rng.hpp"
#include "msgv/synthetic.hpp"

namespace msgv {

struct TrainConfig {
  std::size_t frames_per_clip = 3;
  std::size_t batch = 2;
  std::size_t steps = 100;
  std::size_t clip_length = 64;
  std::size_t max_gap = 8;
  std::size_t num_anchors = 5;
  double anchor_spacing = 16.0;
  double lambda_div = 1.0;
  double lambda_r1 = 1.0;
  std::size_t r1_interval = 16;
  double lr_g = 2e-3;
  double lr_d = 2e-3;
  std::uint64_t model_seed = 1;
  std::uint64_t data_seed = 2;
  bool motion_diff = true;
  bool div_identity_target = false;  // penalize ||A^T A - I|| instead of ||A^T A||
  std::size_t ckpt_interval = 0;     // 0: final checkpoint only
};

inline constexpr const char* kMetricsHeader =
    "step,loss_d,loss_g,l_div,r1,grad_norm_g,grad_norm_d";

struct MetricsRow {
  std::size_t step = 0;
  double loss_d = 0, loss_g = 0, l_div = 0, r1 = 0, grad_norm_g = 0, grad_norm_d = 0;
  std::string csv() const;
};

// Adam with the beta defaults used throughout (0.0, 0.99). Parameters keep
// their registration order, which fixes the checkpoint layout.
class Adam {
 public:
  Adam(std::vector<NamedParam> params, double lr, double beta1 = 0.0, double beta2 = 0.99,
       double eps = 1e-8);

  void step();        // applies accumulated grads
  void zero_grads();  // clears grads on all owned params
  double grad_norm() const;

  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }
  std::uint64_t t() const { return t_; }
  void set_t(std::uint64_t t) { t_ = t; }

  // moments appended as <name>.adam_m / <name>.adam_v
  void collect_state(std::vector<std::pair<std::string, Tensor>>& out) const;

 private:
  std::vector<NamedParam> params_;
  std::vector<Tensor> m_, v_;
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
};

// Mean over layers of (1/T) sum_t ||A_t^T A_t||_F computed from the attention
// logits; with identity_target the gram is measured against I instead.
Tensor diversity_loss(const std::vector<std::vector<AttentionRecord>>& records,
                      bool identity_target = false);

// Non-saturating logistic pair: (softplus(f) + softplus(-r), softplus(-f)).
std::pair<Tensor, Tensor> adversarial_losses(const Tensor& logit_real,
                                             const Tensor& logit_fake);

struct R1Out {
  double value = 0.0;  // exact 0.5 * ||d logit / d frames||^2
  Tensor surrogate;    // scalar whose parameter gradient matches the penalty's
};

// Gradient penalty on real inputs. The penalty value comes from an exact
// input-gradient pass; the parameter-side gradient is realized as a central
// difference of the logit along the (stop-gradient) input-gradient direction,
// which equals the true Hessian-vector product up to O(eps^2).
R1Out r1_penalty(const Discriminator& disc, const std::vector<Tensor>& frames,
                 const std::vector<double>& times, bool motion_diff, double fd_eps = 1e-3);

// Same penalty for an arbitrary scalar function of the frames; logit_fn must
// build a fresh graph from the frames it is handed on every call.
R1Out r1_penalty_fn(const std::function<Tensor(const std::vector<Tensor>&)>& logit_fn,
                    const std::vector<Tensor>& frames, double fd_eps = 1e-3);

// T strictly increasing integer-valued times in [0, clip_length): first frame
// uniform, then gaps uniform in [1, max_gap], clipped so the tail still fits.
std::vector<double> sample_clip_times(Rng& rng, std::size_t clip_length, std::size_t T,
                                      std::size_t max_gap = 8);

class Trainer {
 public:
  struct Setup {
    GeneratorConfig gen;
    DiscriminatorConfig disc;
    StyleConfig style;
    MotionEncoderConfig motion;
    TrainConfig train;
    std::vector<SceneSpec> dataset;
    std::string config_echo;
  };

  explicit Trainer(Setup setup);

  MetricsRow train_step();

  std::size_t step() const { return step_; }
  Generator& generator() { return gen_; }
  Discriminator& discriminator() { return disc_; }
  const Setup& setup() const { return setup_; }
  Rng& model_rng() { return model_rng_; }
  Rng& data_rng() { return data_rng_; }

  CheckpointData snapshot() const;
  void save(const std::string& path) const;
  void restore(const CheckpointData& data);

 private:
  Tensor run_discriminator(const std::vector<Tensor>& frames,
                           const std::vector<double>& times) const;
  std::vector<Tensor> render_real(const SceneSpec& spec,
                                  const std::vector<double>& times) const;

  Setup setup_;
  Rng model_rng_;
  Rng data_rng_;
  Generator gen_;
  Discriminator disc_;
  Adam opt_g_;
  Adam opt_d_;
  std::size_t step_ = 0;
};

}  // namespace msgv
