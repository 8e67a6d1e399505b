#include "msgv/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "msgv/errors.hpp"

namespace msgv {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  unsigned long long x = std::strtoull(v.c_str(), &end, 10);
  if (end == v.c_str() || *end != '\0' || v[0] == '-')
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + v +
                      "'");
  return static_cast<std::uint64_t>(x);
}

double parse_f64(const std::string& key, const std::string& v) {
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (end == v.c_str() || *end != '\0')
    throw ConfigError("config key '" + key + "': expected a number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError("config key '" + key + "': expected 0/1/true/false, got '" + v + "'");
}

std::vector<std::size_t> parse_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ','))
    out.push_back(static_cast<std::size_t>(parse_u64(key, trim(tok))));
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

std::string size_list_text(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string f64_text(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// One table drives parsing and echoing so the two cannot drift apart.
struct KeyBinding {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::map<std::string, KeyBinding> key_table() {
  std::map<std::string, KeyBinding> t;
  auto u64 = [&](const std::string& key, std::uint64_t RunConfig::* field) {
    t[key] = {[key, field](RunConfig& c, const std::string& v) { c.*field = parse_u64(key, v); },
              [field](const RunConfig& c) { return std::to_string(c.*field); }};
  };
  auto size = [&](const std::string& key, std::size_t RunConfig::* field) {
    t[key] = {[key, field](RunConfig& c, const std::string& v) {
                c.*field = static_cast<std::size_t>(parse_u64(key, v));
              },
              [field](const RunConfig& c) { return std::to_string(c.*field); }};
  };
  auto tsize = [&](const std::string& key, std::size_t TrainConfig::* field) {
    t[key] = {[key, field](RunConfig& c, const std::string& v) {
                c.train.*field = static_cast<std::size_t>(parse_u64(key, v));
              },
              [field](const RunConfig& c) { return std::to_string(c.train.*field); }};
  };
  auto tf64 = [&](const std::string& key, double TrainConfig::* field) {
    t[key] = {[key, field](RunConfig& c, const std::string& v) {
                c.train.*field = parse_f64(key, v);
              },
              [field](const RunConfig& c) { return f64_text(c.train.*field); }};
  };
  auto tbool = [&](const std::string& key, bool TrainConfig::* field) {
    t[key] = {[key, field](RunConfig& c, const std::string& v) {
                c.train.*field = parse_bool(key, v);
              },
              [field](const RunConfig& c) { return c.train.*field ? "1" : "0"; }};
  };
  auto tu64 = [&](const std::string& key, std::uint64_t TrainConfig::* field) {
    t[key] = {[key, field](RunConfig& c, const std::string& v) {
                c.train.*field = parse_u64(key, v);
              },
              [field](const RunConfig& c) { return std::to_string(c.train.*field); }};
  };
  auto slist = [&](const std::string& key, std::vector<std::size_t> RunConfig::* field) {
    t[key] = {[key, field](RunConfig& c, const std::string& v) {
                c.*field = parse_size_list(key, v);
              },
              [field](const RunConfig& c) { return size_list_text(c.*field); }};
  };
  auto str = [&](const std::string& key, std::string RunConfig::* field) {
    t[key] = {[field](RunConfig& c, const std::string& v) { c.*field = v; },
              [field](const RunConfig& c) { return c.*field; }};
  };
  auto boolean = [&](const std::string& key, bool RunConfig::* field) {
    t[key] = {[key, field](RunConfig& c, const std::string& v) {
                c.*field = parse_bool(key, v);
              },
              [field](const RunConfig& c) { return c.*field ? "1" : "0"; }};
  };

  tsize("frames_per_clip", &TrainConfig::frames_per_clip);
  tsize("batch", &TrainConfig::batch);
  tsize("steps", &TrainConfig::steps);
  tsize("clip_length", &TrainConfig::clip_length);
  tsize("max_gap", &TrainConfig::max_gap);
  tsize("num_anchors", &TrainConfig::num_anchors);
  tf64("anchor_spacing", &TrainConfig::anchor_spacing);
  tf64("lambda_div", &TrainConfig::lambda_div);
  tf64("lambda_r1", &TrainConfig::lambda_r1);
  tsize("r1_interval", &TrainConfig::r1_interval);
  tf64("lr_g", &TrainConfig::lr_g);
  tf64("lr_d", &TrainConfig::lr_d);
  tu64("model_seed", &TrainConfig::model_seed);
  tu64("data_seed", &TrainConfig::data_seed);
  tbool("motion_diff", &TrainConfig::motion_diff);
  tbool("div_identity_target", &TrainConfig::div_identity_target);
  tsize("ckpt_interval", &TrainConfig::ckpt_interval);

  size("resolution", &RunConfig::resolution);
  size("const_channels", &RunConfig::const_channels);
  slist("gen_channels", &RunConfig::gen_channels);
  str("strategy", &RunConfig::strategy);
  boolean("demod", &RunConfig::demod);

  size("d_c", &RunConfig::d_c);
  size("mapping_layers", &RunConfig::mapping_layers);
  size("d_v", &RunConfig::d_v);
  size("motion_mlp_width", &RunConfig::motion_mlp_width);
  size("num_styles", &RunConfig::num_styles);
  size("d_m", &RunConfig::d_m);
  size("d_h", &RunConfig::d_h);
  size("rank", &RunConfig::rank);

  size("d_z", &RunConfig::d_z);
  size("waves", &RunConfig::waves);
  size("motion_conv_channels", &RunConfig::motion_conv_channels);
  size("motion_conv_layers", &RunConfig::motion_conv_layers);
  size("motion_kernel", &RunConfig::motion_kernel);

  slist("disc_channels", &RunConfig::disc_channels);
  size("disc_global_dim", &RunConfig::disc_global_dim);
  size("disc_time_freqs", &RunConfig::disc_time_freqs);

  str("dataset", &RunConfig::dataset);
  size("dataset_size", &RunConfig::dataset_size);
  (void)u64;
  return t;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  const auto table = key_table();
  RunConfig cfg;
  std::stringstream ss(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(ss, raw)) {
    ++line_no;
    std::string line = raw;
    if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                        trim(raw) + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    auto it = table.find(key);
    if (it == table.end())
      throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(line_no));
    it->second.set(cfg, value);
  }
  if (cfg.strategy != "content_first" && cfg.strategy != "motion_first")
    throw ConfigError("config key 'strategy': expected content_first or motion_first, got '" +
                      cfg.strategy + "'");
  try {
    dataset_kind_from_name(cfg.dataset);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config key 'dataset': ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [key, binding] : key_table()) {
    out += key;
    out += "=";
    out += binding.get(cfg);
    out += "\n";
  }
  return out;
}

Trainer::Setup make_setup(const RunConfig& cfg) {
  Trainer::Setup s;
  s.train = cfg.train;

  s.gen.resolution = cfg.resolution;
  s.gen.const_channels = cfg.const_channels;
  s.gen.channels = cfg.gen_channels;
  s.gen.strategy =
      cfg.strategy == "motion_first" ? ModStrategy::MotionFirst : ModStrategy::ContentFirst;
  s.gen.demod = cfg.demod;

  s.style.d_c = cfg.d_c;
  s.style.mapping_layers = cfg.mapping_layers;
  s.style.d_v = cfg.d_v;
  s.style.motion_mlp_width = cfg.motion_mlp_width;
  s.style.K = cfg.num_styles;
  s.style.d_m = cfg.d_m;
  s.style.d_h = cfg.d_h;
  s.style.R = cfg.rank;

  s.motion.d_z = cfg.d_z;
  s.motion.waves = cfg.waves;
  s.motion.conv_channels = cfg.motion_conv_channels;
  s.motion.conv_layers = cfg.motion_conv_layers;
  s.motion.kernel = cfg.motion_kernel;

  s.disc.resolution = cfg.resolution;
  s.disc.channels = cfg.disc_channels;
  s.disc.items =
      cfg.train.motion_diff ? 2 * cfg.train.frames_per_clip - 1 : cfg.train.frames_per_clip;
  s.disc.global_dim = cfg.disc_global_dim;
  s.disc.time_freqs = cfg.disc_time_freqs;

  s.dataset = make_dataset(dataset_kind_from_name(cfg.dataset), cfg.dataset_size,
                           cfg.train.data_seed, cfg.resolution);
  s.config_echo = run_config_text(cfg);
  return s;
}

Trainer trainer_from_checkpoint(const CheckpointData& data) {
  RunConfig cfg = parse_run_config(data.config_echo);
  Trainer trainer(make_setup(cfg));
  trainer.restore(data);
  return trainer;
}

Trainer load_trainer(const std::string& ckpt_path) {
  return trainer_from_checkpoint(read_checkpoint(ckpt_path));
}

}  // namespace msgv
