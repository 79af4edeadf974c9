#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "tcam/errors.hpp"
#include "tcam/rng.hpp"

namespace tcam::synth {

enum class MotionClass { Stationary, Linear, Circular, Falling, Chase, Oscillating };

inline constexpr std::array<MotionClass, 6> kAllMotionClasses = {
    MotionClass::Stationary, MotionClass::Linear, MotionClass::Circular,
    MotionClass::Falling,    MotionClass::Chase,  MotionClass::Oscillating};

inline std::string_view to_string(MotionClass c) {
  switch (c) {
    case MotionClass::Stationary: return "stationary";
    case MotionClass::Linear: return "linear";
    case MotionClass::Circular: return "circular";
    case MotionClass::Falling: return "falling";
    case MotionClass::Chase: return "chase";
    case MotionClass::Oscillating: return "oscillating";
  }
  return "unknown";
}

inline MotionClass parse_motion_class(std::string_view s) {
  for (auto c : kAllMotionClasses)
    if (to_string(c) == s) return c;
  throw ConfigError("unknown motion class: " + std::string(s));
}

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
  friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
  friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Point, Point) = default;
  double norm() const { return std::hypot(x, y); }
};

/// Axis-aligned box, half-open on the upper edges.
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  bool contains(Point p) const { return p.x >= x0 && p.x < x1 && p.y >= y0 && p.y < y1; }
  double area() const { return std::max(0.0, x1 - x0) * std::max(0.0, y1 - y0); }
  Point center() const { return {(x0 + x1) / 2.0, (y0 + y1) / 2.0}; }
  bool overlaps(const Box& o) const { return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1; }
  Box shifted(Point d) const { return {x0 + d.x, y0 + d.y, x1 + d.x, y1 + d.y}; }
  friend bool operator==(const Box&, const Box&) = default;
};

/// Class-specific parameters; only the fields of the agent's class matter.
struct MotionParams {
  Point velocity;            // linear: units per frame
  double angular_rate = 0;   // circular: radians per frame (sign = direction)
  Point center;              // circular: rotation center
  double gravity = 0;        // falling: units per frame^2, +y is down
  int target = -1;           // chase: index of the pursued agent
  double closing = 0.8;      // chase: fraction of the initial gap closed by the last frame
  Point amplitude;           // oscillating: displacement amplitude vector
  double frequency = 0;      // oscillating: cycles per frame
  friend bool operator==(const MotionParams&, const MotionParams&) = default;
};

struct AgentSpec {
  MotionClass motion = MotionClass::Stationary;
  Box region;
  MotionParams params;
  std::string noun = "object";
  friend bool operator==(const AgentSpec&, const AgentSpec&) = default;
};

struct SceneSpec {
  int frames = 24;
  double width = 100.0;
  double height = 100.0;
  int grid_rows = 12;
  int grid_cols = 12;
  std::vector<AgentSpec> agents;
  std::vector<Box> occluders;
  double jitter = 0.5;
  std::uint64_t seed = 0;
  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

/// positions are track-major: ((j * frames) + t) * 2 + {0: x, 1: y}.
struct TrackSet {
  int tracks = 0;
  int frames = 0;
  std::vector<double> positions;
  std::vector<std::uint8_t> visibility;

  Point at(int j, int t) const {
    const auto i = (static_cast<std::size_t>(j) * frames + t) * 2;
    return {positions[i], positions[i + 1]};
  }
  bool visible(int j, int t) const {
    return visibility[static_cast<std::size_t>(j) * frames + t] != 0;
  }
  friend bool operator==(const TrackSet&, const TrackSet&) = default;
};

struct ExpressionLabel {
  std::string text;
  std::vector<int> positives;
  std::vector<int> negatives;
  MotionClass motion = MotionClass::Stationary;
  friend bool operator==(const ExpressionLabel&, const ExpressionLabel&) = default;
};

/// Cell-center seed points of a rows x cols grid, row-major (x varies fastest).
inline std::vector<Point> init_grid(int rows, int cols, double height, double width) {
  if (rows < 1 || cols < 1) throw ConfigError("init_grid: rows and cols must be >= 1");
  if (!(height > 0.0) || !(width > 0.0)) throw ConfigError("init_grid: extents must be positive");
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      pts.push_back({(c + 0.5) * width / cols, (r + 0.5) * height / rows});
    }
  }
  return pts;
}

inline std::string linear_direction(Point v) {
  if (std::abs(v.x) >= std::abs(v.y)) return v.x < 0 ? "left" : "right";
  return v.y < 0 ? "up" : "down";
}

inline std::string motion_phrase(const AgentSpec& agent, std::string_view target_noun) {
  switch (agent.motion) {
    case MotionClass::Stationary: return "staying still";
    case MotionClass::Linear: return "moving to the " + linear_direction(agent.params.velocity);
    case MotionClass::Circular: return "moving around in a circle";
    case MotionClass::Falling: return "falling down";
    case MotionClass::Chase: return "chasing another " + std::string(target_noun);
    case MotionClass::Oscillating: return "moving back and forth";
  }
  return {};
}

/// "<noun> <motion phrase>"; chase agents name the pursued agent's noun.
inline std::string expression_for(const AgentSpec& agent, std::string_view target_noun = {}) {
  return agent.noun + " " + motion_phrase(agent, target_noun.empty() ? agent.noun : target_noun);
}

inline std::string expression_for(const SceneSpec& spec, std::size_t agent) {
  const auto& a = spec.agents.at(agent);
  std::string_view target;
  if (a.motion == MotionClass::Chase && a.params.target >= 0 &&
      a.params.target < static_cast<int>(spec.agents.size())) {
    target = spec.agents[static_cast<std::size_t>(a.params.target)].noun;
  }
  return expression_for(a, target);
}

namespace detail {

inline Point agent_offset(const SceneSpec& spec, std::size_t agent, double t, int depth) {
  if (depth > static_cast<int>(spec.agents.size())) {
    throw ConfigError("chase targets form a cycle");
  }
  const AgentSpec& a = spec.agents[agent];
  const MotionParams& p = a.params;
  switch (a.motion) {
    case MotionClass::Stationary: return {};
    case MotionClass::Linear: return t * p.velocity;
    case MotionClass::Circular: {
      const Point r0 = a.region.center() - p.center;
      const double c = std::cos(p.angular_rate * t), s = std::sin(p.angular_rate * t);
      const Point r{c * r0.x - s * r0.y, s * r0.x + c * r0.y};
      return r - r0;
    }
    case MotionClass::Falling: return {0.0, 0.5 * p.gravity * t * t};
    case MotionClass::Chase: {
      const auto target = static_cast<std::size_t>(p.target);
      const Point gap = spec.agents[target].region.center() - a.region.center();
      const double u = spec.frames > 1 ? t / (spec.frames - 1) : 0.0;
      return agent_offset(spec, target, t, depth + 1) + (p.closing * u) * gap;
    }
    case MotionClass::Oscillating:
      return std::sin(2.0 * std::numbers::pi * p.frequency * t) * p.amplitude;
  }
  return {};
}

}  // namespace detail

/// Closed-form displacement of an agent at frame t relative to frame 0.
inline Point agent_offset(const SceneSpec& spec, std::size_t agent, double t) {
  return detail::agent_offset(spec, agent, t, 0);
}

inline void validate(const SceneSpec& spec) {
  if (spec.frames < 2) throw ConfigError("scene needs at least 2 frames");
  if (spec.grid_rows < 1 || spec.grid_cols < 1) throw ConfigError("grid must be at least 1x1");
  if (!(spec.width > 0.0) || !(spec.height > 0.0)) throw ConfigError("canvas extents must be positive");
  if (!(spec.jitter >= 0.0)) throw ConfigError("jitter must be non-negative");
  const Box canvas{0.0, 0.0, spec.width, spec.height};
  for (std::size_t i = 0; i < spec.agents.size(); ++i) {
    const auto& a = spec.agents[i];
    const Box& r = a.region;
    if (!(r.x1 > r.x0) || !(r.y1 > r.y0)) throw ConfigError("agent region has no area");
    if (r.x0 < canvas.x0 || r.y0 < canvas.y0 || r.x1 > canvas.x1 || r.y1 > canvas.y1) {
      throw ConfigError("agent " + std::to_string(i) + " region lies outside the canvas");
    }
    if (a.motion == MotionClass::Chase) {
      const int t = a.params.target;
      if (t < 0 || t >= static_cast<int>(spec.agents.size()) || t == static_cast<int>(i)) {
        throw ConfigError("chase agent " + std::to_string(i) + " has invalid target");
      }
    }
    for (std::size_t k = 0; k < i; ++k) {
      if (spec.agents[k].region.overlaps(r)) {
        throw DataError("agent regions " + std::to_string(k) + " and " + std::to_string(i) +
                        " overlap at t=0 (ambiguous membership)");
      }
    }
  }
  for (std::size_t i = 0; i < spec.agents.size(); ++i) (void)agent_offset(spec, i, 1.0);
}

struct SimulationResult {
  TrackSet tracks;
  std::vector<ExpressionLabel> expressions;
  std::vector<int> owner;  // agent index per track, -1 for background
};

/// Moves every grid seed with its owning agent (membership frozen at t=0),
/// adds per-frame Gaussian jitter, and derives visibility and labels.
inline SimulationResult simulate(const SceneSpec& spec) {
  validate(spec);
  const auto seeds = init_grid(spec.grid_rows, spec.grid_cols, spec.height, spec.width);
  const int n = static_cast<int>(seeds.size());
  const int frames = spec.frames;

  SimulationResult out;
  out.tracks.tracks = n;
  out.tracks.frames = frames;
  out.tracks.positions.resize(static_cast<std::size_t>(n) * frames * 2);
  out.tracks.visibility.resize(static_cast<std::size_t>(n) * frames);
  out.owner.assign(static_cast<std::size_t>(n), -1);

  for (int j = 0; j < n; ++j) {
    for (std::size_t a = 0; a < spec.agents.size(); ++a) {
      if (spec.agents[a].region.contains(seeds[static_cast<std::size_t>(j)])) {
        out.owner[static_cast<std::size_t>(j)] = static_cast<int>(a);
        break;
      }
    }
  }

  std::vector<std::vector<Point>> offsets(spec.agents.size(), std::vector<Point>(frames));
  for (std::size_t a = 0; a < spec.agents.size(); ++a)
    for (int t = 0; t < frames; ++t) offsets[a][static_cast<std::size_t>(t)] = agent_offset(spec, a, t);

  Rng rng(combine_seed(spec.seed, 0x747261636b73ULL));
  for (int j = 0; j < n; ++j) {
    const int owner = out.owner[static_cast<std::size_t>(j)];
    for (int t = 0; t < frames; ++t) {
      Point p = seeds[static_cast<std::size_t>(j)];
      if (owner >= 0) p = p + offsets[static_cast<std::size_t>(owner)][static_cast<std::size_t>(t)];
      if (spec.jitter > 0.0) {
        p.x += rng.normal(0.0, spec.jitter);
        p.y += rng.normal(0.0, spec.jitter);
      }
      const auto i = static_cast<std::size_t>(j) * frames + t;
      out.tracks.positions[2 * i] = p.x;
      out.tracks.positions[2 * i + 1] = p.y;
      bool vis = p.x >= 0.0 && p.x <= spec.width && p.y >= 0.0 && p.y <= spec.height;
      for (const auto& occ : spec.occluders) vis = vis && !occ.contains(p);
      out.tracks.visibility[i] = vis ? 1 : 0;
    }
  }

  for (std::size_t a = 0; a < spec.agents.size(); ++a) {
    const std::string text = expression_for(spec, a);
    auto it = std::find_if(out.expressions.begin(), out.expressions.end(),
                           [&](const ExpressionLabel& e) { return e.text == text; });
    if (it == out.expressions.end()) {
      out.expressions.push_back({text, {}, {}, spec.agents[a].motion});
      it = out.expressions.end() - 1;
    }
    for (int j = 0; j < n; ++j)
      if (out.owner[static_cast<std::size_t>(j)] == static_cast<int>(a)) it->positives.push_back(j);
  }
  for (auto& e : out.expressions) {
    std::sort(e.positives.begin(), e.positives.end());
    if (e.positives.empty()) {
      throw DataError("expression '" + e.text + "' covers no tracks (agent region too small)");
    }
    for (int j = 0; j < n; ++j)
      if (!std::binary_search(e.positives.begin(), e.positives.end(), j)) e.negatives.push_back(j);
  }
  return out;
}

}  // namespace tcam::synth
