// msgv: train, sample and analyze the motion-style video GAN.
//
// Exit codes: 0 success, 2 config/usage error, 3 numeric error, 4 I/O error.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "msgv/config.hpp"
#include "msgv/errors.hpp"
#include "msgv/gradcheck_suite.hpp"
#include "msgv/image_io.hpp"
#include "msgv/metrics.hpp"
#include "msgv/styles.hpp"
#include "msgv/synthetic.hpp"

namespace fs = std::filesystem;
using namespace msgv;

namespace {

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string path_join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw IoError("short write to '" + path + "'");
}

std::string csv_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// ---- train ----

int cmd_train(const std::string& config_path, const std::string& out_dir,
              const std::string& resume_ckpt) {
  ensure_dir(out_dir);

  Trainer trainer = [&] {
    if (!resume_ckpt.empty()) {
      // The checkpoint's embedded config echo is the source of truth on
      // resume; a config file is not needed.
      return load_trainer(resume_ckpt);
    }
    return Trainer(make_setup(load_run_config(config_path)));
  }();

  const TrainConfig& tc = trainer.setup().train;
  const std::string metrics_path = path_join(out_dir, "metrics.csv");
  std::ofstream metrics(metrics_path, std::ios::binary);
  if (!metrics) throw IoError("cannot open '" + metrics_path + "' for writing");
  metrics << kMetricsHeader << "\n";

  char name[32];
  while (trainer.step() < tc.steps) {
    MetricsRow row;
    try {
      row = trainer.train_step();
    } catch (const NumericError&) {
      metrics.flush();
      throw;
    }
    metrics << row.csv() << "\n";
    if (!metrics) throw IoError("short write to '" + metrics_path + "'");
    if (tc.ckpt_interval > 0 && trainer.step() % tc.ckpt_interval == 0 &&
        trainer.step() < tc.steps) {
      std::snprintf(name, sizeof(name), "ckpt_%08llu.msgv",
                    static_cast<unsigned long long>(trainer.step()));
      trainer.save(path_join(out_dir, name));
    }
  }
  metrics.flush();
  trainer.save(path_join(out_dir, "ckpt_final.msgv"));
  std::printf("trained %llu steps; wrote %s and %s\n",
              static_cast<unsigned long long>(trainer.step()), metrics_path.c_str(),
              path_join(out_dir, "ckpt_final.msgv").c_str());
  return 0;
}

// ---- sample ----

int cmd_sample(const std::string& ckpt, std::size_t frames, double fps, std::uint64_t seed,
               const std::string& out_dir) {
  if (frames == 0) throw ConfigError("--frames must be at least 1");
  if (!(fps > 0.0)) throw ConfigError("--fps must be positive");
  ensure_dir(out_dir);

  Trainer trainer = load_trainer(ckpt);
  const Generator& gen = trainer.generator();
  const TrainConfig& tc = trainer.setup().train;

  Rng rng(seed);
  Tensor z = Tensor::randn({gen.styles().config().d_c}, rng);
  auto track = sample_motion_noise(rng.next_u64(), tc.num_anchors, gen.motion().config().d_z,
                                   tc.anchor_spacing);

  // The nominal clock runs at 24 time units per second, so the default fps
  // lands on integer times 0..N-1; other rates stretch or compress the clip.
  std::vector<double> times(frames);
  for (std::size_t i = 0; i < frames; ++i) times[i] = static_cast<double>(i) * (24.0 / fps);

  NoGradGuard ng;
  auto res = gen.generate_clip(z, track, times);
  char name[32];
  for (std::size_t i = 0; i < frames; ++i) {
    std::snprintf(name, sizeof(name), "frame_%06zu.ppm", i);
    write_ppm(path_join(out_dir, name), res.frames[i]);
  }
  std::printf("wrote %zu frames to %s\n", frames, out_dir.c_str());
  return 0;
}

// ---- analyze ----

std::size_t default_layer(const Generator& gen) {
  // first convolution of the top (highest-resolution) block
  return gen.layer_count() - 2;
}

std::string matrix_csv(const Tensor& m) {
  std::string out;
  const std::size_t rows = m.shape()[0], cols = m.shape()[1];
  auto v = m.values();
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) out += ",";
      out += csv_num(v[i * cols + j]);
    }
    out += "\n";
  }
  return out;
}

int cmd_analyze(const std::string& ckpt, const std::string& what, const std::string& out_dir,
                std::uint64_t seed, long layer_flag, std::size_t traj_frames, double at_time,
                const std::string& dataset_path, std::size_t clips, std::size_t embed_frames,
                std::uint64_t embed_seed, std::size_t grid_rows, std::size_t grid_cols,
                std::size_t grid_frames) {
  ensure_dir(out_dir);
  Trainer trainer = load_trainer(ckpt);
  const Generator& gen = trainer.generator();
  const TrainConfig& tc = trainer.setup().train;

  Rng rng(seed);
  auto draw_z = [&] { return Tensor::randn({gen.styles().config().d_c}, rng); };
  auto draw_track = [&] {
    return sample_motion_noise(rng.next_u64(), tc.num_anchors, gen.motion().config().d_z,
                               tc.anchor_spacing);
  };
  const std::size_t layer =
      layer_flag < 0 ? default_layer(gen) : static_cast<std::size_t>(layer_flag);

  if (what == "cosine") {
    Tensor c = motion_style_cosine(gen, draw_z(), draw_track(), at_time, layer);
    const std::string path = path_join(out_dir, "cosine.csv");
    write_text(path, matrix_csv(c));
    std::printf("wrote %zux%zu cosine matrix to %s\n", c.shape()[0], c.shape()[1], path.c_str());
    return 0;
  }
  if (what == "trajectory") {
    std::vector<double> times(traj_frames);
    for (std::size_t i = 0; i < traj_frames; ++i) times[i] = static_cast<double>(i);
    Tensor traj = attention_trajectory(gen, draw_z(), draw_track(), times, layer);
    const std::string path = path_join(out_dir, "trajectory.csv");
    write_text(path, matrix_csv(traj));
    std::printf("wrote %zux%zu attention trajectory to %s\n", traj.shape()[0], traj.shape()[1],
                path.c_str());
    return 0;
  }
  if (what == "attmap") {
    NoGradGuard ng;
    auto res = gen.generate_clip(draw_z(), draw_track(), {at_time});
    Tensor maps = attention_map(res.records[0][layer].logits, res.last_features[0]);
    char name[32];
    for (std::size_t k = 0; k < maps.shape()[0]; ++k) {
      std::snprintf(name, sizeof(name), "attmap_%02zu.pgm", k);
      write_pgm(path_join(out_dir, name),
                reshape(slice(maps, 0, k, 1), {maps.shape()[1], maps.shape()[2]}));
    }
    std::printf("wrote %zu attention maps to %s\n", maps.shape()[0], out_dir.c_str());
    return 0;
  }
  if (what == "grid") {
    std::vector<Tensor> contents;
    std::vector<MotionNoiseTrack> tracks;
    for (std::size_t j = 0; j < grid_cols; ++j) contents.push_back(draw_z());
    for (std::size_t i = 0; i < grid_rows; ++i) tracks.push_back(draw_track());
    std::vector<double> times(grid_frames);
    for (std::size_t i = 0; i < grid_frames; ++i) times[i] = static_cast<double>(i);
    auto grid = decomposition_grid(gen, contents, tracks, times);
    char name[32];
    for (std::size_t t = 0; t < grid_frames; ++t) {
      std::vector<Tensor> tiles;
      for (std::size_t i = 0; i < grid_rows; ++i)
        for (std::size_t j = 0; j < grid_cols; ++j) tiles.push_back(grid[i][j].frames[t]);
      std::snprintf(name, sizeof(name), "grid_%06zu.ppm", t);
      write_ppm_grid(path_join(out_dir, name), tiles, grid_rows, grid_cols);
    }
    std::printf("wrote %zu grid frames (%zux%zu clips) to %s\n", grid_frames, grid_rows,
                grid_cols, out_dir.c_str());
    return 0;
  }
  if (what == "frechet") {
    if (dataset_path.empty()) throw ConfigError("--what frechet needs --dataset <manifest>");
    std::ifstream in(dataset_path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset manifest '" + dataset_path + "'");
    std::vector<SceneSpec> dataset;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      dataset.push_back(spec_from_line(line));
    }
    if (dataset.empty()) throw ConfigError("dataset manifest '" + dataset_path + "' is empty");

    auto real = embed_real_clips(dataset, clips, embed_frames, seed, embed_seed);
    auto fake = embed_generated_clips(gen, clips, embed_frames, seed + 1, embed_seed,
                                      tc.num_anchors, tc.anchor_spacing);
    const double fd = frechet_distance(gaussian_stats(real), gaussian_stats(fake));
    std::printf("frechet=%.17g clips=%zu frames=%zu embed_seed=%llu\n", fd, clips, embed_frames,
                static_cast<unsigned long long>(embed_seed));
    return 0;
  }
  throw ConfigError("unknown --what '" + what +
                    "' (expected cosine, trajectory, attmap, grid or frechet)");
}

// ---- bench ----

int cmd_bench(const std::string& layer_spec, std::size_t d_h, std::size_t rank,
              std::size_t styles, std::size_t reps) {
  std::vector<std::size_t> dims;
  {
    std::stringstream ss(layer_spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) dims.push_back(std::stoul(tok));
  }
  if (dims.size() != 4 || dims[0] == 0 || dims[1] == 0 || dims[2] == 0 || dims[3] == 0)
    throw ConfigError("--layer expects c_out,c_in,kh,kw with positive dims, got '" + layer_spec +
                      "'");
  if (reps < 10) throw ConfigError("--reps must be at least 10 for a stable mean/std");
  const std::size_t c_out = dims[0], c_in = dims[1], kh = dims[2], kw = dims[3];

  const auto [lowrank_params, fullrank_params] =
      hyper_param_count({c_out, c_in, kh, kw}, d_h, rank);
  std::printf("lowrank head parameters:  %llu\n",
              static_cast<unsigned long long>(lowrank_params));
  std::printf("fullrank head parameters: %llu\n",
              static_cast<unsigned long long>(fullrank_params));

  // Timed work per repetition, built from the real library ops:
  //   lowrank:  hidden -> K low-rank styles -> reconstruction -> attention
  //   fullrank: hidden -> K dense (c_out*c_in*kh*kw) tensors, same attention
  NoGradGuard ng;
  Rng rng(424242);
  const std::size_t flat = c_in * kh * kw;
  Tensor W = Tensor::randn({c_out, c_in, kh, kw}, rng, 0.1);
  Tensor hidden = Tensor::randn({d_h}, rng);
  Tensor low_head = Tensor::randn({styles * rank * (c_in + kh + kw), d_h}, rng, 0.05);
  Tensor full_head = Tensor::randn({c_out * flat, d_h}, rng, 0.05);

  auto time_reps = [&](const std::function<void()>& fn) {
    std::vector<double> ms(reps);
    fn();  // warm-up, excluded
    for (std::size_t r = 0; r < reps; ++r) {
      auto t0 = std::chrono::steady_clock::now();
      fn();
      auto t1 = std::chrono::steady_clock::now();
      ms[r] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    double mean = 0.0;
    for (double v : ms) mean += v;
    mean /= static_cast<double>(reps);
    double var = 0.0;
    for (double v : ms) var += (v - mean) * (v - mean);
    return std::pair<double, double>(mean, std::sqrt(var / static_cast<double>(reps)));
  };

  auto lowrank_pass = [&] {
    Tensor styles_flat = matmul(low_head, reshape(hidden, {d_h, 1}));
    std::vector<Tensor> rows;
    rows.reserve(styles);
    for (std::size_t k = 0; k < styles; ++k) {
      Tensor sk = reshape(slice(reshape(styles_flat, {styles, rank * (c_in + kh + kw)}), 0, k, 1),
                          {rank, c_in + kh + kw});
      rows.push_back(reshape(lowrank_reconstruct(sk, c_in, kh, kw), {1, flat}));
    }
    (void)mostatt(W, concat(rows, 0));
  };
  auto fullrank_pass = [&] {
    Tensor dense = matmul(full_head, reshape(hidden, {d_h, 1}));
    // collapse the K dense modulations to the same (K, flat) key/value shape;
    // one dense head emission already dominates the cost
    Tensor m0 = reshape(slice(reshape(dense, {c_out, flat}), 0, 0, 1), {1, flat});
    std::vector<Tensor> rows(styles, m0);
    (void)mostatt(W, concat(rows, 0));
  };

  auto [low_mean, low_std] = time_reps(lowrank_pass);
  auto [full_mean, full_std] = time_reps(fullrank_pass);
  std::printf("lowrank  path: %.3f ms +- %.3f ms over %zu reps\n", low_mean, low_std, reps);
  std::printf("fullrank path: %.3f ms +- %.3f ms over %zu reps\n", full_mean, full_std, reps);
  std::printf("speedup: %.2fx\n", full_mean / low_mean);
  return 0;
}

// ---- gradcheck ----

int cmd_gradcheck(const std::string& scope_name, bool inject_sign_flip) {
  GradCheckReport report = run_gradcheck(grad_scope_from_name(scope_name), inject_sign_flip);
  for (const auto& c : report.cases)
    std::printf("%-34s max_rel_err=%.3e tol=%.0e %s\n", c.name.c_str(), c.max_rel_err,
                c.tolerance, c.pass ? "ok" : "FAIL");
  const auto& worst = report.cases[report.worst];
  std::printf("%zu cases; worst: %s (max_rel_err=%.3e)\n", report.cases.size(),
              worst.name.c_str(), worst.max_rel_err);
  if (!report.all_pass) {
    std::fprintf(stderr, "gradcheck FAILED; worst offender: %s (max_rel_err=%.3e)\n",
                 worst.name.c_str(), worst.max_rel_err);
    return 1;
  }
  return 0;
}

// ---- dataset dump ----

int cmd_dataset_dump(const std::string& kind, std::size_t count, std::uint64_t seed,
                     std::size_t resolution, std::size_t frames, const std::string& out_dir) {
  ensure_dir(out_dir);
  auto dataset = make_dataset(dataset_kind_from_name(kind), count, seed, resolution);
  std::string manifest;
  char name[64];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    manifest += spec_to_line(dataset[i]);
    manifest += "\n";
    std::snprintf(name, sizeof(name), "clip_%04zu", i);
    const std::string clip_dir = path_join(out_dir, name);
    ensure_dir(clip_dir);
    NoGradGuard ng;
    for (std::size_t t = 0; t < frames; ++t) {
      std::snprintf(name, sizeof(name), "frame_%06zu.ppm", t);
      write_ppm(path_join(clip_dir, name), render_frame(dataset[i], static_cast<double>(t)));
    }
  }
  write_text(path_join(out_dir, "manifest.txt"), manifest);
  std::printf("wrote %zu clips of %zu frames and manifest.txt to %s\n", dataset.size(), frames,
              out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"motion-style video GAN: training, sampling and analysis"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a model from a key=value config");
  std::string config_path, out_dir = "run", resume_ckpt;
  train->add_option("config", config_path, "config file (key=value lines)");
  train->add_option("--out", out_dir, "output directory")->capture_default_str();
  train->add_option("--resume", resume_ckpt, "checkpoint to resume from (config comes from it)");

  // sample
  auto* sample = app.add_subcommand("sample", "render frames from a checkpoint");
  std::string ckpt;
  std::size_t frames = 16;
  double fps = 24.0;
  std::uint64_t seed = 1;
  std::string sample_out = "samples";
  sample->add_option("ckpt", ckpt, "checkpoint file")->required();
  sample->add_option("--frames", frames, "number of frames")->capture_default_str();
  sample->add_option("--fps", fps, "frames per second against the 24-unit/s clock")
      ->capture_default_str();
  sample->add_option("--seed", seed, "latent/track seed")->capture_default_str();
  sample->add_option("--out", sample_out, "output directory")->capture_default_str();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "inspect a trained model");
  std::string what, analyze_ckpt, analyze_out = "analysis", dataset_path;
  std::uint64_t analyze_seed = 1, embed_seed = 7;
  long layer_flag = -1;
  std::size_t traj_frames = 64, clips = 256, embed_frames = 8;
  std::size_t grid_rows = 3, grid_cols = 3, grid_frames = 8;
  double at_time = 0.0;
  analyze->add_option("ckpt", analyze_ckpt, "checkpoint file")->required();
  analyze->add_option("--what", what, "cosine | trajectory | attmap | grid | frechet")
      ->required();
  analyze->add_option("--out", analyze_out, "output directory")->capture_default_str();
  analyze->add_option("--seed", analyze_seed, "sampling seed")->capture_default_str();
  analyze->add_option("--layer", layer_flag,
                      "generator layer index (default: first conv of the top block)");
  analyze->add_option("--frames", traj_frames, "trajectory length")->capture_default_str();
  analyze->add_option("--time", at_time, "evaluation time for cosine/attmap")
      ->capture_default_str();
  analyze->add_option("--dataset", dataset_path, "manifest path (frechet)");
  analyze->add_option("--clips", clips, "clips per side (frechet)")->capture_default_str();
  analyze->add_option("--embed-frames", embed_frames, "frames per embedded clip (frechet)")
      ->capture_default_str();
  analyze->add_option("--embed-seed", embed_seed, "embedding projection seed (frechet)")
      ->capture_default_str();
  analyze->add_option("--rows", grid_rows, "grid rows (grid)")->capture_default_str();
  analyze->add_option("--cols", grid_cols, "grid columns (grid)")->capture_default_str();
  analyze->add_option("--grid-frames", grid_frames, "frames per grid clip (grid)")
      ->capture_default_str();

  // bench
  auto* bench = app.add_subcommand("bench", "hypernetwork head size and speed comparison");
  std::string layer_spec = "512,512,3,3";
  std::size_t d_h = 128, rank = 1, styles = 8, reps = 10;
  bench->add_option("--layer", layer_spec, "c_out,c_in,kh,kw")->capture_default_str();
  bench->add_option("--dh", d_h, "hypernetwork hidden width")->capture_default_str();
  bench->add_option("--rank", rank, "low-rank reconstruction rank")->capture_default_str();
  bench->add_option("--styles", styles, "number of motion styles K")->capture_default_str();
  bench->add_option("--reps", reps, "timing repetitions (>= 10)")->capture_default_str();

  // gradcheck
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string scope = "ops";
  bool inject_sign_flip = false;
  gradcheck->add_option("--scope", scope, "ops | layer | full")->capture_default_str();
  gradcheck->add_flag("--inject-sign-flip", inject_sign_flip,
                      "append a deliberately broken backward rule (negative control)");

  // dataset dump
  auto* dataset = app.add_subcommand("dataset", "synthetic dataset utilities");
  dataset->require_subcommand(1);
  auto* dump = dataset->add_subcommand("dump", "write PPM clips plus a manifest");
  std::string ds_kind = "two-motion", ds_out = "dataset";
  std::size_t ds_count = 16, ds_resolution = 32, ds_frames = 16;
  std::uint64_t ds_seed = 2;
  dump->add_option("--kind", ds_kind, "single-motion | two-motion | three-motion")
      ->capture_default_str();
  dump->add_option("--count", ds_count, "number of scenes")->capture_default_str();
  dump->add_option("--seed", ds_seed, "dataset seed")->capture_default_str();
  dump->add_option("--resolution", ds_resolution, "frame resolution")->capture_default_str();
  dump->add_option("--frames", ds_frames, "frames rendered per clip")->capture_default_str();
  dump->add_option("--out", ds_out, "output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      if (resume_ckpt.empty() && config_path.empty())
        throw ConfigError("train needs a config file or --resume");
      return cmd_train(config_path, out_dir, resume_ckpt);
    }
    if (*sample) return cmd_sample(ckpt, frames, fps, seed, sample_out);
    if (*analyze)
      return cmd_analyze(analyze_ckpt, what, analyze_out, analyze_seed, layer_flag, traj_frames,
                         at_time, dataset_path, clips, embed_frames, embed_seed, grid_rows,
                         grid_cols, grid_frames);
    if (*bench) return cmd_bench(layer_spec, d_h, rank, styles, reps);
    if (*gradcheck) return cmd_gradcheck(scope, inject_sign_flip);
    if (*dataset) return cmd_dataset_dump(ds_kind, ds_count, ds_seed, ds_resolution, ds_frames,
                                          ds_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 4;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  return 2;
}
