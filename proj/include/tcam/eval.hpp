#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "tcam/discovery.hpp"
#include "tcam/grounding.hpp"
#include "tcam/model.hpp"

namespace tcam {

struct RecallAtK {
  double r1 = 0, r5 = 0, r10 = 0;
};

struct RetrievalMetrics {
  RecallAtK v2t, t2v;
};

namespace detail {

inline bool hit_in_top(const std::vector<std::size_t>& order, std::size_t k, const std::set<std::size_t>& positives) {
  for (std::size_t i = 0; i < std::min(k, order.size()); ++i)
    if (positives.contains(order[i])) return true;
  return false;
}

}  // namespace detail

/// sims[scene][bank entry]; positives[scene] = gt bank indices.
inline RetrievalMetrics retrieval_metrics(const std::vector<std::vector<double>>& sims,
                                          const std::vector<std::vector<std::size_t>>& positives) {
  if (sims.size() != positives.size()) throw DataError("retrieval_metrics: one positive set per scene required");
  RetrievalMetrics m;
  if (sims.empty()) return m;
  const std::size_t nb = sims.front().size();
  for (std::size_t s = 0; s < sims.size(); ++s) {
    if (positives[s].empty()) throw DataError("retrieval_metrics: scene " + std::to_string(s) + " has no positives");
    if (sims[s].size() != nb) throw DataError("retrieval_metrics: ragged similarity matrix");
    const auto order = rank_descending(sims[s]);
    const std::set<std::size_t> pos(positives[s].begin(), positives[s].end());
    m.v2t.r1 += detail::hit_in_top(order, 1, pos);
    m.v2t.r5 += detail::hit_in_top(order, 5, pos);
    m.v2t.r10 += detail::hit_in_top(order, 10, pos);
  }
  const double n = static_cast<double>(sims.size());
  m.v2t.r1 /= n;
  m.v2t.r5 /= n;
  m.v2t.r10 /= n;

  std::vector<std::set<std::size_t>> scenes_for(nb);
  for (std::size_t s = 0; s < positives.size(); ++s)
    for (auto k : positives[s]) scenes_for.at(k).insert(s);
  std::size_t queries = 0;
  for (std::size_t k = 0; k < nb; ++k) {
    if (scenes_for[k].empty()) continue;
    std::vector<double> column(sims.size());
    for (std::size_t s = 0; s < sims.size(); ++s) column[s] = sims[s][k];
    const auto order = rank_descending(column);
    m.t2v.r1 += detail::hit_in_top(order, 1, scenes_for[k]);
    m.t2v.r5 += detail::hit_in_top(order, 5, scenes_for[k]);
    m.t2v.r10 += detail::hit_in_top(order, 10, scenes_for[k]);
    ++queries;
  }
  if (queries > 0) {
    m.t2v.r1 /= static_cast<double>(queries);
    m.t2v.r5 /= static_cast<double>(queries);
    m.t2v.r10 /= static_cast<double>(queries);
  }
  return m;
}

struct GroundingScore {
  double j = 0, f = 0, precision = 0, recall = 0;
};

/// Track-set IoU (J) and F1 (F) of `pred` against `gt` over `tracks` tracks.
inline GroundingScore grounding_metrics(const std::vector<int>& pred, const std::vector<int>& gt, int tracks) {
  for (int p : pred)
    if (p < 0 || p >= tracks) throw DataError("grounding_metrics: predicted index " + std::to_string(p) + " out of range");
  const std::set<int> a(pred.begin(), pred.end()), b(gt.begin(), gt.end());
  GroundingScore g;
  if (a.empty() && b.empty()) return {1, 1, 1, 1};
  std::size_t inter = 0;
  for (int x : a) inter += b.contains(x);
  const std::size_t uni = a.size() + b.size() - inter;
  g.j = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
  g.precision = a.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(a.size());
  g.recall = b.empty() ? 0.0 : static_cast<double>(inter) / static_cast<double>(b.size());
  g.f = (g.precision + g.recall) > 0 ? 2 * g.precision * g.recall / (g.precision + g.recall) : 0.0;
  return g;
}

struct DiscoveryScore {
  double coverage = 0;
  double precision = 0;
  bool precision_defined = true;
  std::optional<double> diversity;
  double count = 0;
};

/// Scene-level discovery quality; `gt` holds normalized expression strings.
inline DiscoveryScore discovery_scene_metrics(const std::vector<DiscoveredEntry>& found, const std::vector<std::string>& gt,
                                              const clip::TextBank& bank) {
  DiscoveryScore d;
  std::set<std::string> truth;
  for (const auto& g : gt) truth.insert(clip::normalize_expression(g));
  std::set<std::string> got;
  for (const auto& e : found) got.insert(clip::normalize_expression(e.expression));
  std::size_t covered = 0;
  for (const auto& t : truth) covered += got.contains(t);
  d.coverage = truth.empty() ? 0.0 : static_cast<double>(covered) / static_cast<double>(truth.size());
  d.count = static_cast<double>(found.size());
  if (found.empty()) {
    d.precision = 0.0;
    d.precision_defined = false;
  } else {
    std::size_t correct = 0;
    for (const auto& e : found) correct += truth.contains(clip::normalize_expression(e.expression));
    d.precision = static_cast<double>(correct) / static_cast<double>(found.size());
  }
  if (bank.has_tags()) {
    std::set<std::string> tags;
    for (const auto& e : found) tags.insert(bank.tags.at(e.index));
    d.diversity = static_cast<double>(tags.size());
  }
  return d;
}

struct DiscoveryMetrics {
  double coverage = 0, precision = 0, avg_expressions = 0;
  std::optional<double> diversity;
  std::size_t undefined_precision = 0;  // scenes with an empty discovered set
};

inline DiscoveryMetrics aggregate_discovery(const std::vector<DiscoveryScore>& scenes) {
  DiscoveryMetrics m;
  if (scenes.empty()) return m;
  double div = 0;
  bool all_div = true;
  for (const auto& s : scenes) {
    m.coverage += s.coverage;
    m.precision += s.precision;
    m.avg_expressions += s.count;
    m.undefined_precision += s.precision_defined ? 0 : 1;
    if (s.diversity) div += *s.diversity;
    else all_div = false;
  }
  const double n = static_cast<double>(scenes.size());
  m.coverage /= n;
  m.precision /= n;
  m.avg_expressions /= n;
  if (all_div) m.diversity = div / n;
  return m;
}

/// Relevance rows of every gt expression of one scene plus the positives.
struct GroundingCase {
  std::vector<double> scores;
  std::vector<int> positives;
};

/// Threshold on [-1, 1] (step 0.005) maximizing mean J; ties keep the lowest.
inline double calibrate_threshold(const std::vector<GroundingCase>& cases) {
  if (cases.empty()) return 0.0;
  double best_theta = 0.0, best_j = -1.0;
  for (int i = 0; i <= 400; ++i) {
    const double theta = static_cast<double>(i - 200) / 200.0;
    double sum = 0;
    for (const auto& c : cases) {
      const auto pred = select_tracks(c.scores, SelectMode::Threshold, theta);
      sum += grounding_metrics(pred, c.positives, static_cast<int>(c.scores.size())).j;
    }
    if (sum > best_j + 1e-12) {
      best_j = sum;
      best_theta = theta;
    }
  }
  return best_theta;
}

struct SceneRecord {
  std::string id;
  bool v2t_hit = false;
  double j = 0, f = 0;
  DiscoveryScore discovery;
  std::size_t expressions = 0;
};

struct MetricsReport {
  RetrievalMetrics retrieval;
  double mean_j = 0, mean_f = 0, jf = 0;
  DiscoveryMetrics discovery;
  double threshold = 0;
  std::size_t scenes = 0, expressions = 0, bank_size = 0;
  std::map<std::string, std::pair<double, std::size_t>> j_by_class;  // mean J, count
  std::vector<SceneRecord> per_scene;
};

/// Raw model outputs over a scene set, reusable for threshold calibration.
struct EvalOutputs {
  std::vector<SceneOutputs> scenes;
  std::vector<std::vector<GroundingCase>> cases;  // per scene, per gt expression
};

template <class T>
EvalOutputs run_model(const TcamModel<T>& model, const std::vector<PreparedScene<T>>& scenes, const clip::TextBank& bank) {
  const nn::Matrix<T> bank_t = bank.embeddings.template cast<T>();
  EvalOutputs out;
  for (const auto& s : scenes) {
    SceneOutputs so = infer_scene(model, s, bank_t);
    std::vector<GroundingCase> cases;
    if (!s.positives.empty()) {
      nn::Matrix<T> text(static_cast<nn::Index>(s.positives.size()), bank_t.cols());
      for (std::size_t i = 0; i < s.positives.size(); ++i) text.row(static_cast<nn::Index>(i)) = bank_t.row(s.positives[i]);
      const nn::Matrix<double> r = relevance_scores(model, text, so.descriptors);
      for (std::size_t i = 0; i < s.positives.size(); ++i) {
        GroundingCase c;
        c.scores.assign(r.row(static_cast<nn::Index>(i)).data(), r.row(static_cast<nn::Index>(i)).data() + r.cols());
        c.positives.assign(s.track_pos[i].begin(), s.track_pos[i].end());
        cases.push_back(std::move(c));
      }
    }
    out.cases.push_back(std::move(cases));
    out.scenes.push_back(std::move(so));
  }
  return out;
}

inline std::vector<GroundingCase> flatten_cases(const EvalOutputs& o) {
  std::vector<GroundingCase> all;
  for (const auto& c : o.cases) all.insert(all.end(), c.begin(), c.end());
  return all;
}

template <class T>
MetricsReport build_report(const EvalOutputs& outputs, const std::vector<PreparedScene<T>>& scenes, const clip::TextBank& bank,
                           double threshold, const SelectionConfig& selection) {
  MetricsReport rep;
  rep.threshold = threshold;
  rep.scenes = scenes.size();
  rep.bank_size = bank.size();
  std::vector<std::vector<double>> sims;
  std::vector<std::vector<std::size_t>> positives;
  std::vector<DiscoveryScore> disc;
  double j_sum = 0, f_sum = 0;
  for (std::size_t s = 0; s < scenes.size(); ++s) {
    const auto& so = outputs.scenes[s];
    sims.push_back(so.sims);
    positives.emplace_back(scenes[s].positives.begin(), scenes[s].positives.end());
    SceneRecord rec;
    rec.id = scenes[s].scene->id;
    const auto order = rank_descending(so.sims);
    rec.v2t_hit = std::find(scenes[s].positives.begin(), scenes[s].positives.end(),
                            static_cast<nn::Index>(order.front())) != scenes[s].positives.end();
    for (std::size_t e = 0; e < outputs.cases[s].size(); ++e) {
      const auto& c = outputs.cases[s][e];
      const auto pred = select_tracks(c.scores, SelectMode::Threshold, threshold);
      const auto g = grounding_metrics(pred, c.positives, static_cast<int>(c.scores.size()));
      auto& cls = rep.j_by_class[std::string(synth::to_string(scenes[s].scene->expressions[e].motion))];
      cls.first += g.j;
      ++cls.second;
      rec.j += g.j;
      rec.f += g.f;
      j_sum += g.j;
      f_sum += g.f;
      ++rep.expressions;
    }
    rec.expressions = outputs.cases[s].size();
    if (rec.expressions) {
      rec.j /= static_cast<double>(rec.expressions);
      rec.f /= static_cast<double>(rec.expressions);
    }
    std::vector<std::string> gt;
    for (const auto& e : scenes[s].scene->expressions) gt.push_back(e.text);
    rec.discovery = discovery_scene_metrics(select_expressions(so.sims, bank, selection), gt, bank);
    disc.push_back(rec.discovery);
    rep.per_scene.push_back(std::move(rec));
  }
  if (!scenes.empty()) rep.retrieval = retrieval_metrics(sims, positives);
  if (rep.expressions) {
    rep.mean_j = j_sum / static_cast<double>(rep.expressions);
    rep.mean_f = f_sum / static_cast<double>(rep.expressions);
  }
  rep.jf = (rep.mean_j + rep.mean_f) / 2.0;
  for (auto& [name, v] : rep.j_by_class) v.first /= static_cast<double>(v.second);
  rep.discovery = aggregate_discovery(disc);
  return rep;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  auto rk = [](const RecallAtK& k) { return nlohmann::json{{"r1", k.r1}, {"r5", k.r5}, {"r10", k.r10}}; };
  nlohmann::json disc = {{"coverage", r.discovery.coverage},
                         {"precision", r.discovery.precision},
                         {"precision_undefined_scenes", r.discovery.undefined_precision},
                         {"avg_expressions", r.discovery.avg_expressions}};
  disc["diversity"] = r.discovery.diversity ? nlohmann::json(*r.discovery.diversity) : nlohmann::json(nullptr);
  nlohmann::json by_class = nlohmann::json::object();
  for (const auto& [name, v] : r.j_by_class) by_class[name] = {{"mean_j", v.first}, {"count", v.second}};
  return {{"v2t", rk(r.retrieval.v2t)},
          {"t2v", rk(r.retrieval.t2v)},
          {"mean_j", r.mean_j},
          {"mean_f", r.mean_f},
          {"jf", r.jf},
          {"j_by_class", by_class},
          {"threshold", r.threshold},
          {"discovery", disc},
          {"scenes", r.scenes},
          {"expressions", r.expressions},
          {"bank_size", r.bank_size},
          {"chance_r1", r.bank_size ? 1.0 / static_cast<double>(r.bank_size) : 0.0}};
}

inline std::string per_scene_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "scene,expressions,v2t_hit,j,f,coverage,precision,discovered\n";
  char buf[256];
  for (const auto& s : r.per_scene) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%d,%.10g,%.10g,%.10g,%.10g,%.0f\n", s.id.c_str(), s.expressions,
                  s.v2t_hit ? 1 : 0, s.j, s.f, s.discovery.coverage, s.discovery.precision, s.discovery.count);
    os << buf;
  }
  return os.str();
}

}  // namespace tcam
