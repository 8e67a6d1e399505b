#include "msgv/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <sstream>
#include <stdexcept>

#include "msgv/errors.hpp"

namespace msgv {

std::array<double, 2> entity_position(const Entity& e, double t) {
  double x = e.x, y = e.y;
  switch (e.motion.kind) {
    case MotionKind::Translate:
      x += e.motion.vx * t;
      y += e.motion.vy * t;
      break;
    case MotionKind::Oscillate: {
      const double off =
          e.motion.amplitude * std::sin(2.0 * 3.14159265358979323846 * t / e.motion.period);
      if (e.motion.axis == 0) {
        x += off;
      } else {
        y += off;
      }
      break;
    }
    case MotionKind::Blink:
      break;
  }
  return {x, y};
}

bool entity_visible(const Entity& e, double t) {
  if (e.motion.kind != MotionKind::Blink) return true;
  const double p = e.motion.blink_period;
  double phase = std::fmod(t, p);
  if (phase < 0.0) phase += p;
  return phase < e.motion.duty * p;
}

namespace {

// Signed coverage of one sample point: 1 inside, 0 outside, linear ramp of
// one pixel across the edge.
double sample_coverage(const Entity& e, double cx, double cy, double px, double py) {
  double d;
  if (e.shape == EntityShape::Disc) {
    d = std::hypot(px - cx, py - cy) - e.radius;
  } else {
    const double dx = std::fabs(px - cx) - e.half_w;
    const double dy = std::fabs(py - cy) - e.half_h;
    d = std::max(dx, dy);
  }
  return std::clamp(0.5 - d, 0.0, 1.0);
}

}  // namespace

Tensor render_frame(const SceneSpec& spec, double t) {
  if (t < 0.0) throw std::invalid_argument("render_frame: t must be non-negative");
  const std::size_t res = spec.resolution;
  std::vector<double> pix(3 * res * res, spec.background);

  const double margin = 0.5;
  const double lo = margin, hi = double(res) - margin;
  static constexpr double kOffsets[2] = {-0.25, 0.25};

  for (const Entity& e : spec.entities) {
    if (!entity_visible(e, t)) continue;
    auto [cx, cy] = entity_position(e, t);
    // safety clamp; datasets are constructed so this never bites inside a clip
    cx = std::clamp(cx, lo, hi);
    cy = std::clamp(cy, lo, hi);

    const double reach =
        (e.shape == EntityShape::Disc) ? e.radius + 1.0 : std::max(e.half_w, e.half_h) + 1.0;
    const std::size_t x0 = std::size_t(std::max(0.0, std::floor(cx - reach)));
    const std::size_t x1 = std::size_t(std::min(double(res), std::ceil(cx + reach) + 1.0));
    const std::size_t y0 = std::size_t(std::max(0.0, std::floor(cy - reach)));
    const std::size_t y1 = std::size_t(std::min(double(res), std::ceil(cy + reach) + 1.0));

    for (std::size_t py = y0; py < y1; ++py) {
      for (std::size_t px = x0; px < x1; ++px) {
        double cov = 0.0;
        for (double oy : kOffsets)
          for (double ox : kOffsets) {
            cov += sample_coverage(e, cx, cy, double(px) + 0.5 + ox, double(py) + 0.5 + oy);
          }
        cov *= 0.25;
        if (cov <= 0.0) continue;
        for (std::size_t c = 0; c < 3; ++c) {
          double& dst = pix[(c * res + py) * res + px];
          dst = dst + cov * (e.color[c] - dst);
        }
      }
    }
  }
  return Tensor::from_data({3, res, res}, std::move(pix));
}

namespace {

std::array<double, 3> random_color(Rng& rng) {
  return {rng.uniform(-0.2, 1.0), rng.uniform(-0.2, 1.0), rng.uniform(-0.2, 1.0)};
}

// geometric parameters scale with resolution so small-frame datasets keep the
// same layout; scale == 1 at the nominal 32-pixel frame
Entity translating_disc(Rng& rng, double res) {
  const double scale = res / 32.0;
  Entity e;
  e.shape = EntityShape::Disc;
  e.radius = rng.uniform(2.5, 5.0) * scale;
  e.color = random_color(rng);
  e.motion.kind = MotionKind::Translate;
  // pick speed first, then a start so the path stays inside for the clip
  const double speed = rng.uniform(0.05, 0.25) * scale;
  const double angle = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  e.motion.vx = speed * std::cos(angle);
  e.motion.vy = speed * std::sin(angle);
  const double m = e.radius + 1.0;
  const double x_lo = std::max(m, m - e.motion.vx * kClipLength);
  const double x_hi = std::min(res - m, res - m - e.motion.vx * kClipLength);
  const double y_lo = std::max(m, m - e.motion.vy * kClipLength);
  const double y_hi = std::min(res - m, res - m - e.motion.vy * kClipLength);
  e.x = rng.uniform(x_lo, x_hi);
  e.y = rng.uniform(y_lo, y_hi);
  return e;
}

Entity blinking_disc(Rng& rng, double res) {
  const double scale = res / 32.0;
  Entity e;
  e.shape = EntityShape::Disc;
  e.radius = rng.uniform(2.0, 4.0) * scale;
  e.color = random_color(rng);
  const double m = e.radius + 1.0;
  e.x = rng.uniform(m, res - m);
  e.y = rng.uniform(m, res - m);
  e.motion.kind = MotionKind::Blink;
  e.motion.blink_period = rng.uniform(6.0, 16.0);
  e.motion.duty = rng.uniform(0.3, 0.7);
  return e;
}

Entity oscillating_bar(Rng& rng, double res) {
  const double scale = res / 32.0;
  Entity e;
  e.shape = EntityShape::Bar;
  e.half_w = rng.uniform(2.0, 5.0) * scale;
  e.half_h = rng.uniform(1.0, 2.0) * scale;
  e.color = random_color(rng);
  e.motion.kind = MotionKind::Oscillate;
  e.motion.axis = rng.uniform() < 0.5 ? 0 : 1;
  e.motion.amplitude = rng.uniform(2.0, 5.0) * scale;
  e.motion.period = rng.uniform(8.0, 32.0);
  const double mx = e.half_w + 1.0 + (e.motion.axis == 0 ? e.motion.amplitude : 0.0);
  const double my = e.half_h + 1.0 + (e.motion.axis == 1 ? e.motion.amplitude : 0.0);
  e.x = rng.uniform(mx, res - mx);
  e.y = rng.uniform(my, res - my);
  return e;
}

}  // namespace

std::vector<SceneSpec> make_dataset(DatasetKind kind, std::size_t count,
                                    std::uint64_t seed, std::size_t resolution) {
  if (count == 0) throw std::invalid_argument("make_dataset: count must be positive");
  if (resolution < 8) throw std::invalid_argument("make_dataset: resolution too small");
  Rng rng(seed);
  std::vector<SceneSpec> specs;
  specs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneSpec spec;
    spec.resolution = resolution;
    spec.background = rng.uniform(-0.95, -0.75);
    const double res = double(spec.resolution);
    switch (kind) {
      case DatasetKind::SingleMotion: {
        const double pick = rng.uniform();
        if (pick < 1.0 / 3.0) {
          spec.entities.push_back(translating_disc(rng, res));
        } else if (pick < 2.0 / 3.0) {
          spec.entities.push_back(blinking_disc(rng, res));
        } else {
          spec.entities.push_back(oscillating_bar(rng, res));
        }
        break;
      }
      case DatasetKind::ThreeMotion:
        spec.entities.push_back(oscillating_bar(rng, res));
        [[fallthrough]];
      case DatasetKind::TwoMotion:
        spec.entities.push_back(translating_disc(rng, res));
        spec.entities.push_back(blinking_disc(rng, res));
        break;
    }
    specs.push_back(std::move(spec));
  }
  return specs;
}

DatasetKind dataset_kind_from_name(const std::string& name) {
  if (name == "single-motion") return DatasetKind::SingleMotion;
  if (name == "two-motion") return DatasetKind::TwoMotion;
  if (name == "three-motion") return DatasetKind::ThreeMotion;
  throw std::invalid_argument("unknown dataset kind '" + name +
                              "' (expected single-motion, two-motion or three-motion)");
}

std::string spec_to_line(const SceneSpec& spec) {
  char buf[256];
  std::string line;
  std::snprintf(buf, sizeof(buf), "resolution=%zu background=%.6g", spec.resolution,
                spec.background);
  line += buf;
  for (const Entity& e : spec.entities) {
    const char* shape = (e.shape == EntityShape::Disc) ? "disc" : "bar";
    std::snprintf(buf, sizeof(buf),
                  " entity=%s,x=%.6g,y=%.6g,r=%.6g,hw=%.6g,hh=%.6g,color=%.6g:%.6g:%.6g",
                  shape, e.x, e.y, e.radius, e.half_w, e.half_h, e.color[0], e.color[1],
                  e.color[2]);
    line += buf;
    switch (e.motion.kind) {
      case MotionKind::Translate:
        std::snprintf(buf, sizeof(buf), ",motion=translate,vx=%.6g,vy=%.6g", e.motion.vx,
                      e.motion.vy);
        break;
      case MotionKind::Oscillate:
        std::snprintf(buf, sizeof(buf), ",motion=oscillate,axis=%d,amp=%.6g,period=%.6g",
                      e.motion.axis, e.motion.amplitude, e.motion.period);
        break;
      case MotionKind::Blink:
        std::snprintf(buf, sizeof(buf), ",motion=blink,period=%.6g,duty=%.6g",
                      e.motion.blink_period, e.motion.duty);
        break;
    }
    line += buf;
  }
  return line;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

// "key=value" -> value, or throw naming what was expected.
std::string expect_field(const std::string& tok, const std::string& key) {
  const std::string prefix = key + "=";
  if (tok.rfind(prefix, 0) != 0)
    throw ConfigError("manifest: expected '" + key + "=', got '" + tok + "'");
  return tok.substr(prefix.size());
}

double parse_num(const std::string& s, const std::string& what) {
  char* end = nullptr;
  double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0')
    throw ConfigError("manifest: bad number '" + s + "' for " + what);
  return v;
}

}  // namespace

SceneSpec spec_from_line(const std::string& line) {
  auto tokens = split(line, ' ');
  if (tokens.size() < 2) throw ConfigError("manifest: line too short: '" + line + "'");
  SceneSpec spec;
  spec.resolution =
      static_cast<std::size_t>(parse_num(expect_field(tokens[0], "resolution"), "resolution"));
  spec.background = parse_num(expect_field(tokens[1], "background"), "background");
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    auto fields = split(tokens[i], ',');
    if (fields.empty()) continue;
    const std::string shape = expect_field(fields[0], "entity");
    Entity e;
    if (shape == "disc")
      e.shape = EntityShape::Disc;
    else if (shape == "bar")
      e.shape = EntityShape::Bar;
    else
      throw ConfigError("manifest: unknown entity shape '" + shape + "'");
    if (fields.size() < 9) throw ConfigError("manifest: truncated entity: '" + tokens[i] + "'");
    e.x = parse_num(expect_field(fields[1], "x"), "x");
    e.y = parse_num(expect_field(fields[2], "y"), "y");
    e.radius = parse_num(expect_field(fields[3], "r"), "r");
    e.half_w = parse_num(expect_field(fields[4], "hw"), "hw");
    e.half_h = parse_num(expect_field(fields[5], "hh"), "hh");
    auto rgb = split(expect_field(fields[6], "color"), ':');
    if (rgb.size() != 3) throw ConfigError("manifest: color needs 3 components");
    for (int c = 0; c < 3; ++c) e.color[c] = parse_num(rgb[c], "color");
    const std::string kind = expect_field(fields[7], "motion");
    if (kind == "translate") {
      e.motion.kind = MotionKind::Translate;
      e.motion.vx = parse_num(expect_field(fields[8], "vx"), "vx");
      if (fields.size() < 10) throw ConfigError("manifest: translate needs vx and vy");
      e.motion.vy = parse_num(expect_field(fields[9], "vy"), "vy");
    } else if (kind == "oscillate") {
      if (fields.size() < 11) throw ConfigError("manifest: oscillate needs axis, amp, period");
      e.motion.kind = MotionKind::Oscillate;
      e.motion.axis = static_cast<int>(parse_num(expect_field(fields[8], "axis"), "axis"));
      e.motion.amplitude = parse_num(expect_field(fields[9], "amp"), "amp");
      e.motion.period = parse_num(expect_field(fields[10], "period"), "period");
    } else if (kind == "blink") {
      if (fields.size() < 10) throw ConfigError("manifest: blink needs period and duty");
      e.motion.kind = MotionKind::Blink;
      e.motion.blink_period = parse_num(expect_field(fields[8], "period"), "period");
      e.motion.duty = parse_num(expect_field(fields[9], "duty"), "duty");
    } else {
      throw ConfigError("manifest: unknown motion kind '" + kind + "'");
    }
    spec.entities.push_back(e);
  }
  return spec;
}

}  // namespace msgv
