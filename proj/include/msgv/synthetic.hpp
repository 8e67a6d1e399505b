#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "msgv/rng.hpp"
#include "msgv/tensor.hpp"

namespace msgv {

enum class EntityShape { Disc, Bar };
enum class MotionKind { Translate, Oscillate, Blink };

// One of three motion programs; unused fields stay zero.
struct MotionProgram {
  MotionKind kind = MotionKind::Translate;
  double vx = 0.0, vy = 0.0;          // translate: pixels per time unit
  int axis = 0;                       // oscillate: 0 = x, 1 = y
  double amplitude = 0.0, period = 1.0;
  double blink_period = 1.0, duty = 0.5;  // visible while fmod(t,p) < duty*p
};

struct Entity {
  EntityShape shape = EntityShape::Disc;
  double x = 0.0, y = 0.0;     // center, pixel coordinates
  double radius = 3.0;         // disc radius
  double half_w = 3.0, half_h = 1.5;  // bar half extents
  std::array<double, 3> color = {1.0, 1.0, 1.0};  // in [-1,1]
  MotionProgram motion;
};

struct SceneSpec {
  std::size_t resolution = 32;
  double background = -0.85;  // uniform gray level in [-1,1]
  std::vector<Entity> entities;
};

enum class DatasetKind { SingleMotion, TwoMotion, ThreeMotion };

// Nominal clip extent in time units; entity parameters are sampled so nothing
// leaves the frame inside [0, kClipLength].
inline constexpr double kClipLength = 64.0;

// Entity center at time t (before the safety clamp to the frame).
std::array<double, 2> entity_position(const Entity& e, double t);

// Whether a blinking entity is lit at time t (non-blinking: always true).
bool entity_visible(const Entity& e, double t);

// Anti-aliased (2x2 supersampled) rasterization; a pure function of (spec, t).
// Returns a (3, res, res) leaf tensor with values in [-1, 1].
Tensor render_frame(const SceneSpec& spec, double t);

std::vector<SceneSpec> make_dataset(DatasetKind kind, std::size_t count,
                                    std::uint64_t seed, std::size_t resolution = 32);

DatasetKind dataset_kind_from_name(const std::string& name);

// One spec as a single line of the dump manifest:
// resolution=.. background=.. entity=shape,x,y,...,motion=kind,params...
std::string spec_to_line(const SceneSpec& spec);

// Inverse of spec_to_line (throws ConfigError on malformed lines). Values
// round-trip at the manifest's printed precision, not bitwise.
SceneSpec spec_from_line(const std::string& line);

}  // namespace msgv
