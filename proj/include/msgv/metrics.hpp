#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msgv/networks.hpp"
#include "msgv/synthetic.hpp"

namespace msgv {

// Row-orthonormal (d_f, dim) projection, deterministic in the seed: seeded
// Gaussian rows made orthonormal by Gram-Schmidt.
std::vector<double> embed_matrix(std::uint64_t seed, std::size_t d_f, std::size_t dim);

// Deterministic clip embedding: project the first n_frames flattened frames
// through the seeded orthonormal matrix, then concatenate [mean_t f;
// mean_t df; std_t df] where df are first differences over time. 3*d_f values.
std::vector<double> feature_embed(const std::vector<Tensor>& frames, std::size_t n_frames,
                                  std::uint64_t embed_seed, std::size_t d_f = 64);

struct FeatureStats {
  std::vector<double> mean;  // (d)
  std::vector<double> cov;   // (d, d) row-major, symmetric
  std::size_t count = 0;
};

// Sample mean and unbiased covariance; needs at least two samples.
FeatureStats gaussian_stats(const std::vector<std::vector<double>>& features);

// Eigenvalues of a symmetric matrix (row-major d*d), ascending, via cyclic
// Jacobi rotations.
std::vector<double> symmetric_eigenvalues(std::vector<double> a, std::size_t d);

// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)), the square root taken by
// eigendecomposing the symmetrized product and clamping negatives to zero.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// Pairwise cosine similarities between the rows of a (K, L) matrix; zero-norm
// rows contribute 0 (with a warning on stderr).
Tensor cosine_matrix(const Tensor& rows);

// Cosine similarities of the K motion-modulation rows at one generator layer,
// for the given content latent, motion track and time.
Tensor motion_style_cosine(const Generator& gen, const Tensor& z_c,
                           const MotionNoiseTrack& track, double t,
                           std::size_t layer_index);

// (T, K): per-time attention weights averaged over output channels at one
// layer; every row lies on the probability simplex.
Tensor attention_trajectory(const Generator& gen, const Tensor& z_c,
                            const MotionNoiseTrack& track, const std::vector<double>& times,
                            std::size_t layer_index);

// map[k] = sum_o softmax(A)[o, k] * F[o] for logits A (c_out, K) and features
// F (c_out, H, W).
Tensor attention_map(const Tensor& logits, const Tensor& features);

// grid[i][j] = generate_clip(contents[j], tracks[i], times): rows share a
// motion track, columns share a content latent.
std::vector<std::vector<GenerateResult>> decomposition_grid(
    const Generator& gen, const std::vector<Tensor>& contents,
    const std::vector<MotionNoiseTrack>& tracks, const std::vector<double>& times);

// Embeddings of `count` real clips (frames at times 0..n_frames-1 of scenes
// drawn from the dataset) and of generated clips at the same times. Both are
// deterministic in their seeds; clips may be embedded in parallel when
// MSGV_THREADS is set above 1.
std::vector<std::vector<double>> embed_real_clips(const std::vector<SceneSpec>& dataset,
                                                  std::size_t count, std::size_t n_frames,
                                                  std::uint64_t sample_seed,
                                                  std::uint64_t embed_seed);
std::vector<std::vector<double>> embed_generated_clips(const Generator& gen,
                                                       std::size_t count,
                                                       std::size_t n_frames,
                                                       std::uint64_t sample_seed,
                                                       std::uint64_t embed_seed,
                                                       std::size_t num_anchors,
                                                       double anchor_spacing);

// MSGV_THREADS environment variable, default 1.
std::size_t worker_thread_count();

}  // namespace msgv
