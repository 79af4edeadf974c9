#pragma once

#include <algorithm>
#include <cmath>
#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcam/nn/tensor_file.hpp"
#include "tcam/synth.hpp"

namespace tcam::synth {

inline constexpr const char* kGeneratorVersion = "tcam-synth/1";

enum class Split { Train, Val, Test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "test") return Split::Test;
  throw DataError("unknown split: " + std::string(s));
}

struct Scene {
  std::string id;
  std::size_t index = 0;
  Split split = Split::Train;
  SceneSpec spec;
  TrackSet tracks;
  std::vector<ExpressionLabel> expressions;
};

struct CorpusConfig {
  std::size_t count = 200;
  std::vector<MotionClass> classes{kAllMotionClasses.begin(), kAllMotionClasses.end()};
  std::vector<std::string> nouns{"bear", "panda", "raft", "dog"};
  int min_agents = 1;
  int max_agents = 3;
  int frames = 24;
  double width = 100.0;
  double height = 100.0;
  int grid_rows = 12;
  int grid_cols = 12;
  double jitter = 0.5;
  double occluder_probability = 0.3;
  double min_box = 24.0;
  double max_box = 34.0;
  std::uint64_t seed = 7;
};

struct Corpus {
  CorpusConfig config;
  std::vector<Scene> scenes;

  std::vector<const Scene*> split(Split s) const {
    std::vector<const Scene*> out;
    for (const auto& sc : scenes)
      if (sc.split == s) out.push_back(&sc);
    return out;
  }
  const Scene& by_id(const std::string& id) const {
    for (const auto& sc : scenes)
      if (sc.id == id) return sc;
    throw DataError("no scene with id " + id);
  }
};

/// 80/10/10 by scene index.
inline Split split_for_index(std::size_t index, std::size_t count) {
  if (index * 10 < count * 8) return Split::Train;
  if (index * 10 < count * 9) return Split::Val;
  return Split::Test;
}

inline std::string scene_id(std::size_t index) {
  std::ostringstream os;
  os << "scene_" << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

namespace detail {

inline bool is_chase_target(MotionClass c) {
  return c != MotionClass::Stationary && c != MotionClass::Chase;
}

inline MotionParams sample_params(MotionClass c, const Box& box, const CorpusConfig& cfg, Rng& rng) {
  MotionParams p;
  const double span = cfg.frames - 1;
  switch (c) {
    case MotionClass::Stationary: break;
    case MotionClass::Linear: {
      const double speed = rng.uniform(1.0, 1.8);
      const double along = rng.uniform() < 0.5 ? -speed : speed;
      const double across = rng.uniform(-0.25, 0.25) * speed;
      p.velocity = rng.uniform() < 0.5 ? Point{along, across} : Point{across, along};
      break;
    }
    case MotionClass::Circular: {
      const double radius = rng.uniform(7.0, 11.0);
      const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
      p.center = box.center() + radius * Point{std::cos(phi), std::sin(phi)};
      p.angular_rate = (rng.uniform() < 0.5 ? -1.0 : 1.0) * 2.0 * std::numbers::pi / span;
      break;
    }
    case MotionClass::Falling: {
      const double drop = rng.uniform(25.0, 40.0);
      p.gravity = 2.0 * drop / (span * span);
      break;
    }
    case MotionClass::Chase: p.closing = 0.8; break;
    case MotionClass::Oscillating: {
      const double amp = rng.uniform(7.0, 11.0);
      p.amplitude = rng.uniform() < 0.5 ? Point{amp, 0.0} : Point{0.0, amp};
      p.frequency = 2.0 / span;
      break;
    }
  }
  return p;
}

/// Box stays inside the canvas over the whole clip.
inline bool stays_on_canvas(const SceneSpec& spec, std::size_t agent) {
  const Box& r = spec.agents[agent].region;
  for (int t = 0; t < spec.frames; ++t) {
    const Box b = r.shifted(agent_offset(spec, agent, t));
    if (b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > spec.width || b.y1 > spec.height) return false;
  }
  return true;
}

inline bool separated(const SceneSpec& spec, std::size_t agent, double gap) {
  const Box& r = spec.agents[agent].region;
  const Box grown{r.x0 - gap, r.y0 - gap, r.x1 + gap, r.y1 + gap};
  for (std::size_t k = 0; k < spec.agents.size(); ++k)
    if (k != agent && spec.agents[k].region.overlaps(grown)) return false;
  return true;
}

inline std::vector<MotionClass> sample_classes(const CorpusConfig& cfg, Rng& rng) {
  const int max_n = std::min<int>(cfg.max_agents, static_cast<int>(cfg.classes.size()));
  const int min_n = std::min(cfg.min_agents, max_n);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const int n = min_n + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_n - min_n + 1)));
    std::vector<MotionClass> pool = cfg.classes;
    std::vector<MotionClass> chosen;
    for (int i = 0; i < n; ++i) {
      const auto k = rng.below(pool.size());
      chosen.push_back(pool[k]);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(k));
    }
    const bool has_chase = std::count(chosen.begin(), chosen.end(), MotionClass::Chase) > 0;
    const bool has_target = std::any_of(chosen.begin(), chosen.end(), is_chase_target);
    if (!has_chase || has_target) return chosen;
  }
  throw ConfigError("class mix cannot satisfy chase targets");
}

}  // namespace detail

/// Deterministic scene `index` of the corpus described by `cfg`.
inline Scene generate_scene(const CorpusConfig& cfg, std::size_t index) {
  if (cfg.nouns.empty()) throw ConfigError("corpus needs at least one noun");
  if (cfg.classes.empty()) throw ConfigError("corpus needs at least one motion class");
  Rng rng(combine_seed(cfg.seed, index));
  for (int attempt = 0; attempt < 200; ++attempt) {
    SceneSpec spec;
    spec.frames = cfg.frames;
    spec.width = cfg.width;
    spec.height = cfg.height;
    spec.grid_rows = cfg.grid_rows;
    spec.grid_cols = cfg.grid_cols;
    spec.jitter = cfg.jitter;
    spec.seed = combine_seed(cfg.seed, 0x5ce11e00ULL + index);

    auto classes = detail::sample_classes(cfg, rng);
    // Chasers are placed after their targets.
    std::stable_partition(classes.begin(), classes.end(),
                          [](MotionClass c) { return c != MotionClass::Chase; });
    bool ok = true;
    for (MotionClass c : classes) {
      bool placed = false;
      for (int tries = 0; tries < 200 && !placed; ++tries) {
        AgentSpec a;
        a.motion = c;
        const double w = rng.uniform(cfg.min_box, cfg.max_box);
        const double h = rng.uniform(cfg.min_box, cfg.max_box);
        const double x0 = rng.uniform(0.0, cfg.width - w);
        const double y0 = rng.uniform(0.0, cfg.height - h);
        a.region = {x0, y0, x0 + w, y0 + h};
        a.params = detail::sample_params(c, a.region, cfg, rng);
        a.noun = cfg.nouns[rng.below(cfg.nouns.size())];
        if (c == MotionClass::Chase) {
          std::vector<int> targets;
          for (std::size_t k = 0; k < spec.agents.size(); ++k)
            if (detail::is_chase_target(spec.agents[k].motion)) targets.push_back(static_cast<int>(k));
          a.params.target = targets[rng.below(targets.size())];
          a.noun = spec.agents[static_cast<std::size_t>(a.params.target)].noun;
          const double gap = (spec.agents[static_cast<std::size_t>(a.params.target)].region.center() -
                              a.region.center()).norm();
          if (gap < 30.0) continue;
        }
        spec.agents.push_back(a);
        const std::size_t i = spec.agents.size() - 1;
        if (detail::separated(spec, i, 2.0) && detail::stays_on_canvas(spec, i)) {
          placed = true;
        } else {
          spec.agents.pop_back();
        }
      }
      if (!placed) {
        ok = false;
        break;
      }
    }
    if (!ok) continue;
    if (rng.uniform() < cfg.occluder_probability) {
      const double s = rng.uniform(12.0, 20.0);
      const double x0 = rng.uniform(0.0, cfg.width - s);
      const double y0 = rng.uniform(0.0, cfg.height - s);
      spec.occluders.push_back({x0, y0, x0 + s, y0 + s});
    }
    SimulationResult sim;
    try {
      sim = simulate(spec);
    } catch (const DataError&) {
      continue;  // an agent covering no grid point; redraw
    }
    Scene scene;
    scene.id = scene_id(index);
    scene.index = index;
    scene.split = split_for_index(index, cfg.count);
    scene.spec = std::move(spec);
    scene.tracks = std::move(sim.tracks);
    scene.expressions = std::move(sim.expressions);
    return scene;
  }
  throw ConfigError("could not place agents for scene " + std::to_string(index) +
                    "; canvas too small for the requested boxes");
}

inline Corpus make_corpus(const CorpusConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("corpus count must be >= 1");
  Corpus c;
  c.config = cfg;
  c.scenes.reserve(cfg.count);
  for (std::size_t i = 0; i < cfg.count; ++i) c.scenes.push_back(generate_scene(cfg, i));
  return c;
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const Box& b) { return {b.x0, b.y0, b.x1, b.y1}; }
inline Box box_from_json(const nlohmann::json& j) {
  return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}
inline nlohmann::json to_json(Point p) { return {p.x, p.y}; }
inline Point point_from_json(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

inline nlohmann::json to_json(const AgentSpec& a) {
  return {{"motion_class", to_string(a.motion)},
          {"region", to_json(a.region)},
          {"noun", a.noun},
          {"velocity", to_json(a.params.velocity)},
          {"angular_rate", a.params.angular_rate},
          {"center", to_json(a.params.center)},
          {"gravity", a.params.gravity},
          {"target", a.params.target},
          {"closing", a.params.closing},
          {"amplitude", to_json(a.params.amplitude)},
          {"frequency", a.params.frequency}};
}

inline AgentSpec agent_from_json(const nlohmann::json& j) {
  AgentSpec a;
  a.motion = parse_motion_class(j.at("motion_class").get<std::string>());
  a.region = box_from_json(j.at("region"));
  a.noun = j.at("noun").get<std::string>();
  a.params.velocity = point_from_json(j.at("velocity"));
  a.params.angular_rate = j.at("angular_rate").get<double>();
  a.params.center = point_from_json(j.at("center"));
  a.params.gravity = j.at("gravity").get<double>();
  a.params.target = j.at("target").get<int>();
  a.params.closing = j.at("closing").get<double>();
  a.params.amplitude = point_from_json(j.at("amplitude"));
  a.params.frequency = j.at("frequency").get<double>();
  return a;
}

inline nlohmann::json to_json(const SceneSpec& s) {
  nlohmann::json agents = nlohmann::json::array();
  for (const auto& a : s.agents) agents.push_back(to_json(a));
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& b : s.occluders) occ.push_back(to_json(b));
  return {{"frames", s.frames},       {"width", s.width},         {"height", s.height},
          {"grid_rows", s.grid_rows}, {"grid_cols", s.grid_cols}, {"agents", agents},
          {"occluders", occ},         {"jitter", s.jitter},       {"seed", s.seed}};
}

inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
  SceneSpec s;
  s.frames = j.at("frames").get<int>();
  s.width = j.at("width").get<double>();
  s.height = j.at("height").get<double>();
  s.grid_rows = j.at("grid_rows").get<int>();
  s.grid_cols = j.at("grid_cols").get<int>();
  for (const auto& a : j.at("agents")) s.agents.push_back(agent_from_json(a));
  for (const auto& b : j.at("occluders")) s.occluders.push_back(box_from_json(b));
  s.jitter = j.at("jitter").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline nlohmann::json to_json(const Scene& sc) {
  nlohmann::json positions = nlohmann::json::array();
  nlohmann::json visibility = nlohmann::json::array();
  for (int j = 0; j < sc.tracks.tracks; ++j) {
    nlohmann::json row = nlohmann::json::array();
    nlohmann::json vis = nlohmann::json::array();
    for (int t = 0; t < sc.tracks.frames; ++t) {
      const Point p = sc.tracks.at(j, t);
      row.push_back({p.x, p.y});
      vis.push_back(sc.tracks.visible(j, t));
    }
    positions.push_back(std::move(row));
    visibility.push_back(std::move(vis));
  }
  nlohmann::json exprs = nlohmann::json::array();
  for (const auto& e : sc.expressions) {
    exprs.push_back({{"text", e.text}, {"positives", e.positives}, {"motion_class", to_string(e.motion)}});
  }
  return {{"id", sc.id},
          {"index", sc.index},
          {"split", to_string(sc.split)},
          {"spec", to_json(sc.spec)},
          {"positions", positions},
          {"visibility", visibility},
          {"expressions", exprs}};
}

inline Scene scene_from_json(const nlohmann::json& j) {
  Scene sc;
  sc.id = j.at("id").get<std::string>();
  sc.index = j.at("index").get<std::size_t>();
  sc.split = parse_split(j.at("split").get<std::string>());
  sc.spec = scene_spec_from_json(j.at("spec"));
  const auto& pos = j.at("positions");
  const auto& vis = j.at("visibility");
  sc.tracks.tracks = static_cast<int>(pos.size());
  sc.tracks.frames = sc.spec.frames;
  if (static_cast<int>(pos.size()) != sc.spec.grid_rows * sc.spec.grid_cols || vis.size() != pos.size()) {
    throw DataError(sc.id + ": track count does not match the grid");
  }
  for (std::size_t tr = 0; tr < pos.size(); ++tr) {
    if (static_cast<int>(pos[tr].size()) != sc.spec.frames ||
        static_cast<int>(vis[tr].size()) != sc.spec.frames) {
      throw DataError(sc.id + ": track length does not match frame count");
    }
    for (int t = 0; t < sc.spec.frames; ++t) {
      sc.tracks.positions.push_back(pos[tr][static_cast<std::size_t>(t)].at(0).get<double>());
      sc.tracks.positions.push_back(pos[tr][static_cast<std::size_t>(t)].at(1).get<double>());
      sc.tracks.visibility.push_back(vis[tr][static_cast<std::size_t>(t)].get<bool>() ? 1 : 0);
    }
  }
  const int n = sc.tracks.tracks;
  for (const auto& e : j.at("expressions")) {
    ExpressionLabel label;
    label.text = e.at("text").get<std::string>();
    label.positives = e.at("positives").get<std::vector<int>>();
    label.motion = parse_motion_class(e.at("motion_class").get<std::string>());
    std::sort(label.positives.begin(), label.positives.end());
    if (label.positives.empty()) throw DataError(sc.id + ": expression without positive tracks");
    for (int p : label.positives)
      if (p < 0 || p >= n) throw DataError(sc.id + ": positive track index out of range");
    for (int k = 0; k < n; ++k)
      if (!std::binary_search(label.positives.begin(), label.positives.end(), k)) label.negatives.push_back(k);
    sc.expressions.push_back(std::move(label));
  }
  return sc;
}

inline nlohmann::json config_to_json(const CorpusConfig& c) {
  std::vector<std::string> classes;
  for (auto k : c.classes) classes.emplace_back(to_string(k));
  return {{"count", c.count},
          {"classes", classes},
          {"nouns", c.nouns},
          {"min_agents", c.min_agents},
          {"max_agents", c.max_agents},
          {"frames", c.frames},
          {"width", c.width},
          {"height", c.height},
          {"grid_rows", c.grid_rows},
          {"grid_cols", c.grid_cols},
          {"jitter", c.jitter},
          {"occluder_probability", c.occluder_probability},
          {"min_box", c.min_box},
          {"max_box", c.max_box},
          {"seed", c.seed}};
}

inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig c;
  c.count = j.at("count").get<std::size_t>();
  c.classes.clear();
  for (const auto& s : j.at("classes")) c.classes.push_back(parse_motion_class(s.get<std::string>()));
  c.nouns = j.at("nouns").get<std::vector<std::string>>();
  c.min_agents = j.at("min_agents").get<int>();
  c.max_agents = j.at("max_agents").get<int>();
  c.frames = j.at("frames").get<int>();
  c.width = j.at("width").get<double>();
  c.height = j.at("height").get<double>();
  c.grid_rows = j.at("grid_rows").get<int>();
  c.grid_cols = j.at("grid_cols").get<int>();
  c.jitter = j.at("jitter").get<double>();
  c.occluder_probability = j.at("occluder_probability").get<double>();
  c.min_box = j.at("min_box").get<double>();
  c.max_box = j.at("max_box").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline std::filesystem::path corpus_scenes_path(const std::filesystem::path& dir) { return dir / "corpus.jsonl"; }
inline std::filesystem::path corpus_manifest_path(const std::filesystem::path& dir) {
  return dir / "corpus.manifest.json";
}

/// Writes `<dir>/corpus.jsonl` (one scene per line) and `<dir>/corpus.manifest.json`.
inline void write_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::string lines;
  std::map<std::string, std::size_t> split_counts{{"train", 0}, {"val", 0}, {"test", 0}};
  for (const auto& sc : corpus.scenes) {
    lines += to_json(sc).dump();
    lines += '\n';
    ++split_counts[std::string(to_string(sc.split))];
  }
  nn::write_file_bytes(corpus_scenes_path(dir), lines);
  const std::uint64_t hash = fnv1a64(lines);
  nlohmann::json manifest = {{"generator_version", kGeneratorVersion},
                             {"scene_count", corpus.scenes.size()},
                             {"splits", split_counts},
                             {"seed", corpus.config.seed},
                             {"config", config_to_json(corpus.config)},
                             {"content_hash", hash}};
  nn::write_file_bytes(corpus_manifest_path(dir), manifest.dump(1) + "\n");
}

inline Corpus read_corpus(const std::filesystem::path& dir) {
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(nn::read_file_bytes(corpus_manifest_path(dir)));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt corpus manifest: " + std::string(e.what()));
  }
  const std::string lines = nn::read_file_bytes(corpus_scenes_path(dir));
  if (manifest.contains("content_hash") && manifest["content_hash"].get<std::uint64_t>() != fnv1a64(lines)) {
    throw DataError("corpus.jsonl does not match the hash recorded in its manifest");
  }
  Corpus c;
  try {
    c.config = corpus_config_from_json(manifest.at("config"));
    std::istringstream in(lines);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      c.scenes.push_back(scene_from_json(nlohmann::json::parse(line)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt corpus: " + std::string(e.what()));
  }
  if (c.scenes.size() != manifest.at("scene_count").get<std::size_t>()) {
    throw DataError("corpus scene count disagrees with manifest");
  }
  return c;
}

inline std::uint64_t corpus_hash(const std::filesystem::path& dir) {
  return fnv1a64(nn::read_file_bytes(corpus_scenes_path(dir)));
}

// ---------------------------------------------------------------------------
// Separability oracle: handcrafted kinematics + nearest centroid.

struct KinematicFeatures {
  double mean_speed = 0;
  double straightness = 0;  // net displacement / path length
  double turning = 0;       // |mean signed turning angle|
  double acceleration = 0;  // late-third speed / early-third speed
  double closing = 0;       // min over other agents of final/initial centroid distance
  double reversals = 0;     // fraction of steps reversing direction

  std::array<double, 6> values() const {
    return {mean_speed, straightness, turning, acceleration, closing, reversals};
  }
};

/// Mean trajectory of each agent's member tracks.
inline std::vector<std::vector<Point>> agent_centroids(const Scene& sc) {
  std::vector<std::vector<Point>> out;
  for (const auto& e : sc.expressions) {
    std::vector<Point> c(static_cast<std::size_t>(sc.tracks.frames));
    for (int t = 0; t < sc.tracks.frames; ++t) {
      Point s;
      for (int j : e.positives) s = s + sc.tracks.at(j, t);
      c[static_cast<std::size_t>(t)] = (1.0 / static_cast<double>(e.positives.size())) * s;
    }
    out.push_back(std::move(c));
  }
  return out;
}

inline std::vector<KinematicFeatures> kinematic_features(const Scene& sc) {
  const auto cents = agent_centroids(sc);
  std::vector<KinematicFeatures> feats;
  const std::size_t frames = static_cast<std::size_t>(sc.tracks.frames);
  for (std::size_t a = 0; a < cents.size(); ++a) {
    const auto& c = cents[a];
    KinematicFeatures f;
    double path = 0, turn = 0, early = 0, late = 0;
    int reversals = 0;
    const std::size_t third = std::max<std::size_t>(1, (frames - 1) / 3);
    for (std::size_t t = 1; t < frames; ++t) {
      const double step = (c[t] - c[t - 1]).norm();
      path += step;
      if (t <= third) early += step;
      if (t > frames - 1 - third) late += step;
      if (t >= 2) {
        const Point d0 = c[t - 1] - c[t - 2], d1 = c[t] - c[t - 1];
        turn += std::atan2(d0.x * d1.y - d0.y * d1.x, d0.x * d1.x + d0.y * d1.y);
        if (d0.x * d1.x + d0.y * d1.y < 0) ++reversals;
      }
    }
    f.mean_speed = path / static_cast<double>(frames - 1);
    f.straightness = path > 0 ? (c.back() - c.front()).norm() / path : 0.0;
    f.turning = frames > 2 ? std::abs(turn) / static_cast<double>(frames - 2) : 0.0;
    f.acceleration = late / std::max(early, 1e-9);
    f.reversals = frames > 2 ? reversals / static_cast<double>(frames - 2) : 0.0;
    f.closing = 1.0;
    for (std::size_t b = 0; b < cents.size(); ++b) {
      if (b == a) continue;
      const double d0 = (cents[b].front() - c.front()).norm();
      const double d1 = (cents[b].back() - c.back()).norm();
      if (d0 > 0) f.closing = std::min(f.closing, d1 / d0);
    }
    feats.push_back(f);
  }
  return feats;
}

struct SeparabilityReport {
  double accuracy = 0;
  std::size_t evaluated = 0;
};

/// Nearest-centroid motion-class accuracy on z-scored kinematic features,
/// fit on even-indexed scenes, evaluated on odd-indexed ones.
inline SeparabilityReport motion_separability(const Corpus& corpus) {
  struct Sample {
    std::array<double, 6> x;
    MotionClass y;
    bool train;
  };
  std::vector<Sample> samples;
  for (const auto& sc : corpus.scenes) {
    const auto feats = kinematic_features(sc);
    for (std::size_t a = 0; a < feats.size(); ++a) {
      samples.push_back({feats[a].values(), sc.expressions[a].motion, sc.index % 2 == 0});
    }
  }
  std::array<double, 6> mu{}, sd{};
  for (const auto& s : samples)
    for (int k = 0; k < 6; ++k) mu[k] += s.x[k];
  for (auto& m : mu) m /= std::max<std::size_t>(1, samples.size());
  for (const auto& s : samples)
    for (int k = 0; k < 6; ++k) sd[k] += (s.x[k] - mu[k]) * (s.x[k] - mu[k]);
  for (auto& v : sd) v = std::sqrt(v / std::max<std::size_t>(1, samples.size())) + 1e-12;
  for (auto& s : samples)
    for (int k = 0; k < 6; ++k) s.x[k] = (s.x[k] - mu[k]) / sd[k];

  std::map<MotionClass, std::pair<std::array<double, 6>, int>> centroids;
  for (const auto& s : samples) {
    if (!s.train) continue;
    auto& [sum, n] = centroids[s.y];
    for (int k = 0; k < 6; ++k) sum[k] += s.x[k];
    ++n;
  }
  for (auto& [cls, c] : centroids)
    for (auto& v : c.first) v /= c.second;

  SeparabilityReport r;
  std::size_t correct = 0;
  for (const auto& s : samples) {
    if (s.train) continue;
    double best = 1e300;
    MotionClass pred = MotionClass::Stationary;
    for (const auto& [cls, c] : centroids) {
      double d = 0;
      for (int k = 0; k < 6; ++k) d += (s.x[k] - c.first[k]) * (s.x[k] - c.first[k]);
      if (d < best) {
        best = d;
        pred = cls;
      }
    }
    correct += pred == s.y ? 1 : 0;
    ++r.evaluated;
  }
  r.accuracy = r.evaluated ? static_cast<double>(correct) / static_cast<double>(r.evaluated) : 0.0;
  return r;
}

}  // namespace tcam::synth
