#pragma once

#include <string>

#include "msgv/checkpoint.hpp"
#include "msgv/training.hpp"

namespace msgv {

// Flat key=value run configuration covering the whole model and training
// setup. Every field has a default, so an empty file is a valid config;
// unknown keys are rejected so typos cannot silently fall back to defaults.
struct RunConfig {
  TrainConfig train;

  // generator
  std::size_t resolution = 32;
  std::size_t const_channels = 64;
  std::vector<std::size_t> gen_channels = {128, 96, 64};
  std::string strategy = "content_first";  // or "motion_first"
  bool demod = true;

  // styles / hypernetwork
  std::size_t d_c = 64;
  std::size_t mapping_layers = 2;
  std::size_t d_v = 16;
  std::size_t motion_mlp_width = 256;
  std::size_t num_styles = 8;  // K
  std::size_t d_m = 128;
  std::size_t d_h = 128;
  std::size_t rank = 1;  // R

  // motion encoder
  std::size_t d_z = 16;
  std::size_t waves = 16;
  std::size_t motion_conv_channels = 16;
  std::size_t motion_conv_layers = 2;
  std::size_t motion_kernel = 11;

  // discriminator
  std::vector<std::size_t> disc_channels = {32, 64, 96};
  std::size_t disc_global_dim = 64;
  std::size_t disc_time_freqs = 8;

  // dataset
  std::string dataset = "two-motion";  // single-motion | two-motion | three-motion
  std::size_t dataset_size = 128;
};

// Parses key=value lines ('#' starts a comment). Throws ConfigError on
// unknown keys or malformed values, naming the offender.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Canonical echo of every key; parse_run_config(run_config_text(c)) == c.
std::string run_config_text(const RunConfig& cfg);

// Expands the flat config into the trainer setup (builds the dataset, sizes
// the discriminator arity from frames_per_clip and motion_diff, embeds the
// canonical echo for checkpoints).
Trainer::Setup make_setup(const RunConfig& cfg);

// Rebuilds a trainer from a checkpoint's embedded config echo and restores
// its state.
Trainer trainer_from_checkpoint(const CheckpointData& data);
Trainer load_trainer(const std::string& ckpt_path);

}  // namespace msgv
