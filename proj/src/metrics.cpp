#include "msgv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

#include "msgv/errors.hpp"

namespace msgv {

namespace {

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace

std::size_t worker_thread_count() {
  const char* env = std::getenv("MSGV_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  long n = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || n < 1)
    throw ConfigError("MSGV_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<std::size_t>(n);
}

std::vector<double> embed_matrix(std::uint64_t seed, std::size_t d_f, std::size_t dim) {
  if (d_f == 0 || dim == 0)
    throw std::invalid_argument("embed_matrix: dimensions must be positive");
  if (d_f > dim)
    throw std::invalid_argument("embed_matrix: cannot orthonormalize " + std::to_string(d_f) +
                                " rows in dimension " + std::to_string(dim));
  Rng rng(seed);
  std::vector<double> q(d_f * dim);
  for (double& x : q) x = rng.normal();
  // Modified Gram-Schmidt with a second pass for numerical safety.
  for (std::size_t i = 0; i < d_f; ++i) {
    double* ri = q.data() + i * dim;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t j = 0; j < i; ++j) {
        const double* rj = q.data() + j * dim;
        double dot = 0.0;
        for (std::size_t k = 0; k < dim; ++k) dot += ri[k] * rj[k];
        for (std::size_t k = 0; k < dim; ++k) ri[k] -= dot * rj[k];
      }
    }
    double norm2 = 0.0;
    for (std::size_t k = 0; k < dim; ++k) norm2 += ri[k] * ri[k];
    double norm = std::sqrt(norm2);
    if (!(norm > 1e-12))
      throw NumericError("embed_matrix: degenerate row " + std::to_string(i) +
                         " during orthonormalization");
    for (std::size_t k = 0; k < dim; ++k) ri[k] /= norm;
  }
  return q;
}

std::vector<double> feature_embed(const std::vector<Tensor>& frames, std::size_t n_frames,
                                  std::uint64_t embed_seed, std::size_t d_f) {
  if (n_frames < 2)
    throw std::invalid_argument("feature_embed: need at least 2 frames for temporal stats");
  if (frames.size() < n_frames)
    throw std::invalid_argument("feature_embed: clip has " + std::to_string(frames.size()) +
                                " frames, need " + std::to_string(n_frames));
  const std::size_t dim = frames[0].size();
  for (std::size_t t = 0; t < n_frames; ++t)
    if (frames[t].size() != dim)
      throw std::invalid_argument("feature_embed: frame " + std::to_string(t) +
                                  " has mismatched size");
  const std::vector<double> q = embed_matrix(embed_seed, d_f, dim);

  std::vector<std::vector<double>> f(n_frames, std::vector<double>(d_f, 0.0));
  for (std::size_t t = 0; t < n_frames; ++t) {
    auto x = frames[t].values();
    for (std::size_t i = 0; i < d_f; ++i) {
      const double* row = q.data() + i * dim;
      double acc = 0.0;
      for (std::size_t k = 0; k < dim; ++k) acc += row[k] * x[k];
      f[t][i] = acc;
    }
  }

  const std::size_t n_diff = n_frames - 1;
  std::vector<double> out(3 * d_f, 0.0);
  for (std::size_t i = 0; i < d_f; ++i) {
    double mean_f = 0.0;
    for (std::size_t t = 0; t < n_frames; ++t) mean_f += f[t][i];
    mean_f /= static_cast<double>(n_frames);

    double mean_d = 0.0;
    for (std::size_t t = 0; t + 1 < n_frames; ++t) mean_d += f[t + 1][i] - f[t][i];
    mean_d /= static_cast<double>(n_diff);

    double var_d = 0.0;
    for (std::size_t t = 0; t + 1 < n_frames; ++t) {
      double d = f[t + 1][i] - f[t][i] - mean_d;
      var_d += d * d;
    }
    var_d /= static_cast<double>(n_diff);

    out[i] = mean_f;
    out[d_f + i] = mean_d;
    out[2 * d_f + i] = std::sqrt(var_d);
  }
  return out;
}

FeatureStats gaussian_stats(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2)
    throw std::invalid_argument("gaussian_stats: need at least 2 samples, got " +
                                std::to_string(features.size()));
  const std::size_t n = features.size();
  const std::size_t d = features[0].size();
  for (const auto& v : features)
    if (v.size() != d) throw std::invalid_argument("gaussian_stats: inconsistent feature sizes");

  FeatureStats s;
  s.count = n;
  s.mean.assign(d, 0.0);
  for (const auto& v : features)
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += v[i];
  for (double& m : s.mean) m /= static_cast<double>(n);

  s.cov.assign(d * d, 0.0);
  for (const auto& v : features) {
    for (std::size_t i = 0; i < d; ++i) {
      const double ci = v[i] - s.mean[i];
      for (std::size_t j = i; j < d; ++j) s.cov[i * d + j] += ci * (v[j] - s.mean[j]);
    }
  }
  const double scale = 1.0 / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      const double c = s.cov[i * d + j] * scale;
      s.cov[i * d + j] = c;
      s.cov[j * d + i] = c;
    }
  return s;
}

std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t d) {
  if (a.size() != d * d)
    throw std::invalid_argument("symmetric_eigenvalues: matrix size mismatch");
  if (d == 0) return {};
  auto at = [&](std::size_t i, std::size_t j) -> double& { return a[i * d + j]; };

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) off += at(i, j) * at(i, j);
    double diag = 0.0;
    for (std::size_t i = 0; i < d; ++i) diag += at(i, i) * at(i, i);
    if (off <= 1e-28 * (1.0 + diag)) break;

    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = at(p, q);
        if (apq == 0.0) continue;
        const double app = at(p, p);
        const double aqq = at(q, q);
        const double tau = (aqq - app) / (2.0 * apq);
        const double t = (tau >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(tau) + std::sqrt(1.0 + tau * tau));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = at(k, p);
          const double akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = at(p, k);
          const double aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
    }
  }

  std::vector<double> eig(d);
  for (std::size_t i = 0; i < d; ++i) eig[i] = at(i, i);
  std::sort(eig.begin(), eig.end());
  return eig;
}

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  const std::size_t d = a.mean.size();
  if (b.mean.size() != d || a.cov.size() != d * d || b.cov.size() != d * d)
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  if (!all_finite(a.mean) || !all_finite(b.mean) || !all_finite(a.cov) || !all_finite(b.cov))
    throw NumericError("frechet_distance: non-finite statistics");

  double dmu2 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double dm = a.mean[i] - b.mean[i];
    dmu2 += dm * dm;
  }

  double trace_a = 0.0, trace_b = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    trace_a += a.cov[i * d + i];
    trace_b += b.cov[i * d + i];
  }

  // Symmetrized product 0.5 * (Sa Sb + (Sa Sb)^T); its eigenvalues give the
  // trace of the matrix square root after clamping negatives that come from
  // roundoff on near-singular inputs.
  std::vector<double> prod(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double aik = a.cov[i * d + k];
      if (aik == 0.0) continue;
      const double* brow = b.cov.data() + k * d;
      double* prow = prod.data() + i * d;
      for (std::size_t j = 0; j < d; ++j) prow[j] += aik * brow[j];
    }
  std::vector<double> sym(d * d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) sym[i * d + j] = 0.5 * (prod[i * d + j] + prod[j * d + i]);

  double trace_sqrt = 0.0;
  for (double lam : symmetric_eigenvalues(std::move(sym), d))
    trace_sqrt += std::sqrt(std::max(lam, 0.0));

  const double fd = dmu2 + trace_a + trace_b - 2.0 * trace_sqrt;
  if (!std::isfinite(fd)) throw NumericError("frechet_distance: non-finite result");
  return fd;
}

Tensor cosine_matrix(const Tensor& rows) {
  if (rows.rank() != 2)
    throw std::invalid_argument("cosine_matrix: expected a 2-D matrix, got shape " +
                                shape_str(rows.shape()));
  const std::size_t k = rows.shape()[0];
  const std::size_t l = rows.shape()[1];
  auto v = rows.values();

  std::vector<double> norms(k, 0.0);
  bool warned = false;
  for (std::size_t i = 0; i < k; ++i) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < l; ++j) n2 += v[i * l + j] * v[i * l + j];
    norms[i] = std::sqrt(n2);
    if (norms[i] <= 1e-300 && !warned) {
      std::fprintf(stderr, "warning: cosine_matrix: zero-norm row %zu, similarities set to 0\n",
                   i);
      warned = true;
    }
  }

  std::vector<double> out(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (norms[i] <= 1e-300 || norms[j] <= 1e-300) continue;
      double dot = 0.0;
      for (std::size_t m = 0; m < l; ++m) dot += v[i * l + m] * v[j * l + m];
      out[i * k + j] = dot / (norms[i] * norms[j]);
    }
  }
  return Tensor::from_data({k, k}, std::move(out));
}

Tensor motion_style_cosine(const Generator& gen, const Tensor& z_c,
                           const MotionNoiseTrack& track, double t,
                           std::size_t layer_index) {
  if (layer_index >= gen.layer_count())
    throw std::invalid_argument("motion_style_cosine: layer index " +
                                std::to_string(layer_index) + " out of range (layers: " +
                                std::to_string(gen.layer_count()) + ")");
  NoGradGuard ng;
  const StyleHypernet& styles = gen.styles();
  Tensor w = styles.map_content(z_c);
  Tensor v = gen.motion().motion_code(track, t);
  Tensor m = styles.motion_vectors(w, v);
  const std::size_t layer_id = gen.layer(layer_index).layer_id();
  Tensor rows = styles.modulation_rows(styles.hyper_styles(m, layer_id), layer_id);
  return cosine_matrix(rows);
}

Tensor attention_trajectory(const Generator& gen, const Tensor& z_c,
                            const MotionNoiseTrack& track, const std::vector<double>& times,
                            std::size_t layer_index) {
  if (layer_index >= gen.layer_count())
    throw std::invalid_argument("attention_trajectory: layer index " +
                                std::to_string(layer_index) + " out of range (layers: " +
                                std::to_string(gen.layer_count()) + ")");
  NoGradGuard ng;
  GenerateResult res = gen.generate_clip(z_c, track, times);
  const std::size_t t_count = times.size();
  std::size_t k = 0;
  std::vector<double> out;
  for (std::size_t t = 0; t < t_count; ++t) {
    const Tensor& weights = res.records[t][layer_index].weights;  // (c_out, K)
    const std::size_t c_out = weights.shape()[0];
    if (t == 0) {
      k = weights.shape()[1];
      out.assign(t_count * k, 0.0);
    }
    auto wv = weights.values();
    for (std::size_t o = 0; o < c_out; ++o)
      for (std::size_t j = 0; j < k; ++j) out[t * k + j] += wv[o * k + j];
    for (std::size_t j = 0; j < k; ++j) out[t * k + j] /= static_cast<double>(c_out);
  }
  return Tensor::from_data({t_count, k}, std::move(out));
}

Tensor attention_map(const Tensor& logits, const Tensor& features) {
  if (logits.rank() != 2)
    throw std::invalid_argument("attention_map: logits must be (c_out, K), got shape " +
                                shape_str(logits.shape()));
  if (features.rank() != 3)
    throw std::invalid_argument("attention_map: features must be (c_out, H, W), got shape " +
                                shape_str(features.shape()));
  const std::size_t c_out = logits.shape()[0];
  const std::size_t k = logits.shape()[1];
  if (features.shape()[0] != c_out)
    throw std::invalid_argument("attention_map: channel mismatch between logits and features");
  const std::size_t h = features.shape()[1];
  const std::size_t w = features.shape()[2];

  NoGradGuard ng;
  Tensor probs = softmax(logits, 1);
  auto p = probs.values();
  auto f = features.values();
  std::vector<double> out(k * h * w, 0.0);
  const std::size_t hw = h * w;
  for (std::size_t o = 0; o < c_out; ++o) {
    const double* fo = f.data() + o * hw;
    for (std::size_t j = 0; j < k; ++j) {
      const double pj = p[o * k + j];
      double* mj = out.data() + j * hw;
      for (std::size_t s = 0; s < hw; ++s) mj[s] += pj * fo[s];
    }
  }
  return Tensor::from_data({k, h, w}, std::move(out));
}

std::vector<std::vector<GenerateResult>> decomposition_grid(
    const Generator& gen, const std::vector<Tensor>& contents,
    const std::vector<MotionNoiseTrack>& tracks, const std::vector<double>& times) {
  if (contents.empty() || tracks.empty())
    throw std::invalid_argument("decomposition_grid: need at least one content and one track");
  NoGradGuard ng;
  std::vector<std::vector<GenerateResult>> grid;
  grid.reserve(tracks.size());
  for (const auto& track : tracks) {
    std::vector<GenerateResult> row;
    row.reserve(contents.size());
    for (const auto& z : contents) row.push_back(gen.generate_clip(z, track, times));
    grid.push_back(std::move(row));
  }
  return grid;
}

namespace {

// Runs `fn(i)` for i in [0, count) on up to worker_thread_count() threads.
// Work items must be independent; determinism comes from pre-drawing any
// random inputs before dispatch.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min(worker_thread_count(), count == 0 ? 1 : count);
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += threads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

std::vector<double> clip_times(std::size_t n_frames) {
  std::vector<double> times(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t) times[t] = static_cast<double>(t);
  return times;
}

}  // namespace

std::vector<std::vector<double>> embed_real_clips(const std::vector<SceneSpec>& dataset,
                                                  std::size_t count, std::size_t n_frames,
                                                  std::uint64_t sample_seed,
                                                  std::uint64_t embed_seed) {
  if (dataset.empty()) throw std::invalid_argument("embed_real_clips: empty dataset");
  Rng rng(sample_seed);
  std::vector<std::size_t> picks(count);
  for (std::size_t i = 0; i < count; ++i)
    picks[i] = static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(dataset.size()) - 1));

  const std::vector<double> times = clip_times(n_frames);
  std::vector<std::vector<double>> out(count);
  parallel_for(count, [&](std::size_t i) {
    NoGradGuard ng;
    std::vector<Tensor> frames;
    frames.reserve(n_frames);
    for (double t : times) frames.push_back(render_frame(dataset[picks[i]], t));
    out[i] = feature_embed(frames, n_frames, embed_seed);
  });
  return out;
}

std::vector<std::vector<double>> embed_generated_clips(const Generator& gen,
                                                       std::size_t count,
                                                       std::size_t n_frames,
                                                       std::uint64_t sample_seed,
                                                       std::uint64_t embed_seed,
                                                       std::size_t num_anchors,
                                                       double anchor_spacing) {
  Rng rng(sample_seed);
  const std::size_t d_c = gen.styles().config().d_c;
  const std::size_t d_z = gen.motion().config().d_z;
  std::vector<Tensor> latents;
  std::vector<MotionNoiseTrack> tracks;
  latents.reserve(count);
  tracks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    latents.push_back(Tensor::randn({d_c}, rng));
    tracks.push_back(sample_motion_noise(rng.next_u64(), num_anchors, d_z, anchor_spacing));
  }

  const std::vector<double> times = clip_times(n_frames);
  std::vector<std::vector<double>> out(count);
  parallel_for(count, [&](std::size_t i) {
    NoGradGuard ng;
    GenerateResult res = gen.generate_clip(latents[i], tracks[i], times);
    out[i] = feature_embed(res.frames, n_frames, embed_seed);
  });
  return out;
}

}  // namespace msgv
