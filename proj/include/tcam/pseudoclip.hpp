#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "tcam/corpus.hpp"
#include "tcam/errors.hpp"
#include "tcam/nn/tensor_file.hpp"
#include "tcam/rng.hpp"

namespace tcam::clip {

inline constexpr Eigen::Index kDim = 512;
inline constexpr const char* kBackgroundToken = "__background__";

using Vec = Eigen::VectorXd;
using nn::Matrix;

/// Lowercase and collapse runs of whitespace to single spaces.
inline std::string normalize_expression(std::string_view s) {
  std::string out;
  bool space = false;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      space = !out.empty();
      continue;
    }
    if (space) out.push_back(' ');
    space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

inline std::vector<std::string> tokenize(std::string_view s) {
  std::vector<std::string> tokens;
  std::istringstream in(normalize_expression(s));
  std::string tok;
  while (in >> tok) tokens.push_back(tok);
  return tokens;
}

/// Gaussian 512-vector seeded by the FNV-1a hash of the token bytes.
inline Vec token_vector(std::string_view token) {
  Rng rng(fnv1a64(token));
  Vec v(kDim);
  for (Eigen::Index i = 0; i < kDim; ++i) v[i] = rng.normal();
  return v;
}

inline Vec embed_text(std::string_view s) {
  auto tokens = tokenize(s);
  if (tokens.empty()) throw DataError("embed_text: empty expression");
  // Summing in sorted token order makes word order irrelevant to the last bit.
  std::sort(tokens.begin(), tokens.end());
  Vec sum = Vec::Zero(kDim);
  for (const auto& t : tokens) sum += token_vector(t);
  const double n = sum.norm();
  if (!(n > 0.0)) throw NumericError("embed_text: zero-norm embedding");
  return sum / n;
}

// sqrt(fl(x * x)) == |x| in IEEE arithmetic, so cosine(a, a) is exactly 1.
inline double cosine(const Vec& a, const Vec& b) { return a.dot(b) / std::sqrt(a.dot(a) * b.dot(b)); }

/// Memoizes embed_text; not thread safe.
class TextEncoder {
 public:
  const Vec& operator()(const std::string& s) {
    auto it = cache_.find(s);
    if (it == cache_.end()) it = cache_.emplace(s, embed_text(s)).first;
    return it->second;
  }

 private:
  std::unordered_map<std::string, Vec> cache_;
};

struct FrameConfig {
  double noise = 0.1;  // sigma_f
};

/// Frame feature for frame t: area-fraction-weighted agent expression
/// embeddings, a background vector, and Gaussian noise of total scale
/// sigma_f, then normalized.
inline Vec frame_feature(const synth::Scene& scene, int t, const FrameConfig& cfg,
                         TextEncoder& enc) {
  if (t < 0 || t >= scene.spec.frames) {
    throw DataError("frame_feature: frame " + std::to_string(t) + " outside [0, " +
                    std::to_string(scene.spec.frames) + ")");
  }
  const auto& agents = scene.spec.agents;
  double total_area = 0;
  for (const auto& a : agents) total_area += a.region.area();
  Vec f = enc(kBackgroundToken);
  for (std::size_t a = 0; a < agents.size(); ++a) {
    const double w = total_area > 0 ? agents[a].region.area() / total_area : 0.0;
    f += w * enc(synth::expression_for(scene.spec, a));
  }
  if (cfg.noise > 0) {
    Rng rng(combine_seed(scene.spec.seed, 0x6672616d65000000ULL + static_cast<std::uint64_t>(t)));
    const double sd = cfg.noise / std::sqrt(static_cast<double>(kDim));
    for (Eigen::Index i = 0; i < kDim; ++i) f[i] += rng.normal(0.0, sd);
  }
  return f / f.norm();
}

/// T x 512 frame features, float.
inline Matrix<float> frame_features(const synth::Scene& scene, const FrameConfig& cfg,
                                    TextEncoder& enc) {
  Matrix<float> out(scene.spec.frames, kDim);
  for (int t = 0; t < scene.spec.frames; ++t) {
    out.row(t) = frame_feature(scene, t, cfg, enc).cast<float>().transpose();
  }
  return out;
}

inline Vec pooled_frame_feature(const Matrix<float>& frames) {
  return frames.cast<double>().colwise().mean().transpose();
}

// ---------------------------------------------------------------------------
// Text bank

struct BankEntry {
  std::string expression;
  std::string tag;  // motion class name, or empty
};

struct TextBank {
  std::vector<std::string> expressions;
  std::vector<std::string> tags;  // empty string = untagged
  Matrix<double> embeddings;      // N_b x 512

  std::size_t size() const { return expressions.size(); }
  bool has_tags() const {
    return !tags.empty() && std::none_of(tags.begin(), tags.end(), [](const auto& t) { return t.empty(); });
  }
  std::optional<std::size_t> find(std::string_view expression) const {
    const std::string key = normalize_expression(expression);
    auto it = std::lower_bound(expressions.begin(), expressions.end(), key);
    if (it == expressions.end() || *it != key) return std::nullopt;
    return static_cast<std::size_t>(it - expressions.begin());
  }
  std::size_t index_of(std::string_view expression) const {
    auto i = find(expression);
    if (!i) throw DataError("bank does not contain expression '" + std::string(expression) + "'");
    return *i;
  }
};

/// Deduplicates (after normalization), sorts lexicographically, and embeds.
/// The first non-empty tag seen for an expression wins.
inline TextBank build_text_bank(const std::vector<BankEntry>& entries) {
  std::map<std::string, std::string> unique;
  for (const auto& e : entries) {
    const std::string key = normalize_expression(e.expression);
    if (key.empty()) throw DataError("bank expression is empty");
    auto [it, inserted] = unique.emplace(key, e.tag);
    if (!inserted && it->second.empty()) it->second = e.tag;
  }
  if (unique.empty()) throw DataError("bank needs at least one expression");
  TextBank bank;
  bank.embeddings.resize(static_cast<Eigen::Index>(unique.size()), kDim);
  Eigen::Index row = 0;
  for (const auto& [expr, tag] : unique) {
    bank.expressions.push_back(expr);
    bank.tags.push_back(tag);
    bank.embeddings.row(row++) = embed_text(expr).transpose();
  }
  return bank;
}

struct BankConfig {
  double distractor_ratio = 3.0;
  std::vector<std::string> extra_nouns{"cat", "horse", "person", "car"};
  std::uint64_t seed = 11;
};

/// Plausible motions that never occur in the generated corpus.
inline std::vector<std::pair<std::string, std::string>> extra_phrases() {
  return {{"jumping up", "jumping"},           {"rolling on the ground", "rolling"},
          {"climbing a tree", "climbing"},     {"spinning in place", "spinning"},
          {"swimming forward", "swimming"},    {"turning around", "turning"}};
}

inline std::vector<std::pair<std::string, std::string>> class_phrases(const std::string& noun) {
  using synth::MotionClass;
  std::vector<std::pair<std::string, std::string>> out;
  auto tag = [](MotionClass c) { return std::string(synth::to_string(c)); };
  out.emplace_back("staying still", tag(MotionClass::Stationary));
  for (const char* dir : {"left", "right", "up", "down"}) {
    out.emplace_back(std::string("moving to the ") + dir, tag(MotionClass::Linear));
  }
  out.emplace_back("moving around in a circle", tag(MotionClass::Circular));
  out.emplace_back("falling down", tag(MotionClass::Falling));
  out.emplace_back("chasing another " + noun, tag(MotionClass::Chase));
  out.emplace_back("moving back and forth", tag(MotionClass::Oscillating));
  return out;
}

/// Core entries are every expression in the corpus; distractors
/// (round(ratio * core) of them, capped by the candidate pool) are drawn
/// without replacement from noun x phrase combinations absent from the corpus.
inline std::vector<BankEntry> corpus_bank_entries(const synth::Corpus& corpus, const BankConfig& cfg) {
  std::vector<BankEntry> core;
  std::set<std::string> core_keys;
  for (const auto& sc : corpus.scenes) {
    for (const auto& e : sc.expressions) {
      const std::string key = normalize_expression(e.text);
      if (core_keys.insert(key).second) core.push_back({key, std::string(synth::to_string(e.motion))});
    }
  }
  std::set<std::string> nouns(corpus.config.nouns.begin(), corpus.config.nouns.end());
  nouns.insert(cfg.extra_nouns.begin(), cfg.extra_nouns.end());
  std::vector<BankEntry> pool;
  for (const auto& noun : nouns) {
    auto phrases = class_phrases(noun);
    for (auto& p : extra_phrases()) phrases.push_back(p);
    for (const auto& [phrase, tag] : phrases) {
      const std::string key = normalize_expression(noun + " " + phrase);
      if (!core_keys.contains(key)) pool.push_back({key, tag});
    }
  }
  const auto want = std::min<std::size_t>(
      pool.size(), static_cast<std::size_t>(std::llround(cfg.distractor_ratio * static_cast<double>(core.size()))));
  Rng rng(cfg.seed);
  for (std::size_t i = 0; i < want; ++i) {  // partial Fisher-Yates
    const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(want);
  core.insert(core.end(), pool.begin(), pool.end());
  return core;
}

inline TextBank build_corpus_bank(const synth::Corpus& corpus, const BankConfig& cfg) {
  return build_text_bank(corpus_bank_entries(corpus, cfg));
}

/// Writes `<base>.manifest.json` and `<base>.f32`.
inline void save_bank(const std::filesystem::path& base, const TextBank& bank) {
  nn::TensorFile file;
  file.tensors.push_back({"embeddings", bank.embeddings.cast<float>()});
  file.meta = {{"kind", "text-bank"},
               {"count", bank.size()},
               {"dim", kDim},
               {"ordering", "lexicographic"},
               {"expressions", bank.expressions},
               {"tags", bank.tags}};
  nn::write_tensor_file(base, file);
}

/// Embeddings are the stored 32-bit values widened to double.
inline TextBank load_bank(const std::filesystem::path& base) {
  const auto manifest_text = nn::read_file_bytes(nn::manifest_path(base));
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt bank manifest: " + std::string(e.what()));
  }
  const auto& meta = manifest.value("meta", nlohmann::json::object());
  if (meta.value("count", std::size_t{0}) == 0) throw DataError("empty bank: " + base.string());
  const nn::TensorFile file = nn::read_tensor_file(base);
  TextBank bank;
  try {
    bank.expressions = file.meta.at("expressions").get<std::vector<std::string>>();
    bank.tags = file.meta.at("tags").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt bank manifest: " + std::string(e.what()));
  }
  const auto* emb = file.find("embeddings");
  if (!emb) throw DataError("bank file has no embeddings tensor");
  const auto count = file.meta.at("count").get<std::size_t>();
  if (file.meta.at("dim").get<Eigen::Index>() != kDim || emb->data.cols() != kDim) {
    throw DataError("bank dimension mismatch: manifest says " + file.meta.at("dim").dump() +
                    ", tensor has " + std::to_string(emb->data.cols()));
  }
  if (static_cast<std::size_t>(emb->data.rows()) != count || bank.expressions.size() != count ||
      bank.tags.size() != count) {
    throw DataError("bank count mismatch between manifest and tensor");
  }
  bank.embeddings = emb->data.cast<double>();
  return bank;
}

inline std::uint64_t bank_hash(const std::filesystem::path& base) {
  return fnv1a64(nn::read_file_bytes(nn::blob_path(base))) ^
         mix64(fnv1a64(nn::read_file_bytes(nn::manifest_path(base))));
}

}  // namespace tcam::clip
