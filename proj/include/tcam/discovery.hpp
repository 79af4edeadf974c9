#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tcam/mfa.hpp"
#include "tcam/pseudoclip.hpp"

namespace tcam {

struct DiscoveryConfig {
  double alpha = 1.0;           // motion fusion weight
  bool identity_init = false;   // headProj = I instead of random
  double init_scale = 0.0;      // 0 means 1/sqrt(512)
};

/// e_video = normalize((mean_t f_t + alpha * pool(m)) W), W learnable 512 x 512.
template <class T>
struct VideoHead {
  DiscoveryConfig config;
  nn::Parameter<T>* weight = nullptr;

  static VideoHead make(nn::ParamStore<T>& store, const DiscoveryConfig& cfg, nn::Index dim, Rng& rng) {
    VideoHead h;
    h.config = cfg;
    const double sd = cfg.init_scale > 0 ? cfg.init_scale : 1.0 / std::sqrt(static_cast<double>(dim));
    h.weight = &store.get_or_create("discovery.head", dim, dim,
                                    cfg.identity_init ? nn::init::identity_plus_noise<T>(rng, 0.0)
                                                      : nn::init::normal<T>(rng, sd));
    return h;
  }

  nn::Var<T> operator()(nn::Tape<T>& tape, const nn::Matrix<T>& frames, const nn::Var<T>* descriptors) const {
    if (frames.rows() < 1) throw DataError("video_embedding: no frames");
    nn::Var<T> pooled = tape.constant(frames.colwise().mean());
    if (descriptors && config.alpha != 0.0) {
      pooled = add(pooled, scale(pooled_motion_summary(*descriptors), static_cast<T>(config.alpha)));
    }
    return normalize_rows(matmul(pooled, tape.parameter(*weight)), 0, "video_embedding: degenerate");
  }
};

/// s_k = cos(e_video, e_k) over the bank.
inline std::vector<double> score_bank(const Eigen::VectorXd& e_video, const clip::TextBank& bank) {
  if (bank.size() == 0) throw DataError("score_bank: empty bank");
  std::vector<double> s(bank.size());
  const double vn = e_video.norm();
  for (std::size_t k = 0; k < bank.size(); ++k) {
    const auto row = bank.embeddings.row(static_cast<Eigen::Index>(k));
    s[k] = std::clamp(row.dot(e_video) / (vn * row.norm()), -1.0, 1.0);
  }
  return s;
}

enum class Strategy { TopK, Percentile, Threshold, Adaptive };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::TopK: return "top_k";
    case Strategy::Percentile: return "percentile";
    case Strategy::Threshold: return "threshold";
    case Strategy::Adaptive: return "adaptive";
  }
  return "adaptive";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "top_k") return Strategy::TopK;
  if (s == "percentile") return Strategy::Percentile;
  if (s == "threshold") return Strategy::Threshold;
  if (s == "adaptive") return Strategy::Adaptive;
  throw ConfigError("unknown selection strategy: " + std::string(s));
}

struct SelectionConfig {
  Strategy strategy = Strategy::Adaptive;
  std::size_t k = 5;
  double percentile = 70.0;
  double threshold = 0.5;
  std::size_t adaptive_max = 10;
};

struct DiscoveredEntry {
  std::size_t index = 0;
  std::string expression;
  double similarity = 0;
};

/// Bank indices by descending score, ties by ascending index.
inline std::vector<std::size_t> rank_descending(const std::vector<double>& s) {
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  return order;
}

/// Number of entries the nearest-rank percentile keeps for distinct scores.
inline std::size_t percentile_count(double p, std::size_t n) {
  const double raw = std::ceil((100.0 - p) * static_cast<double>(n) / 100.0 - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n);
}

/// Ranks of the selection, in ranked order.
inline std::vector<std::size_t> select_ranked(const std::vector<double>& s, const SelectionConfig& cfg) {
  if (s.empty()) throw DataError("select_expressions: empty score vector");
  const auto order = rank_descending(s);
  const std::size_t n = s.size();
  std::size_t keep = 0;
  switch (cfg.strategy) {
    case Strategy::TopK:
      if (cfg.k < 1) throw ConfigError("top_k: K must be >= 1");
      keep = std::min(cfg.k, n);
      break;
    case Strategy::Percentile: {
      if (!(cfg.percentile >= 0.0 && cfg.percentile <= 100.0)) {
        throw ConfigError("percentile must lie in [0, 100]");
      }
      const double cut = s[order[percentile_count(cfg.percentile, n) - 1]];
      while (keep < n && s[order[keep]] >= cut) ++keep;
      break;
    }
    case Strategy::Threshold:
      if (!std::isfinite(cfg.threshold)) throw ConfigError("threshold must be finite");
      while (keep < n && s[order[keep]] >= cfg.threshold) ++keep;
      break;
    case Strategy::Adaptive: {
      if (cfg.adaptive_max < 1) throw ConfigError("adaptive: window must be >= 1");
      if (n == 1) {
        keep = 1;
        break;
      }
      const std::size_t window = std::min(cfg.adaptive_max, n - 1);
      double best = -1.0;
      for (std::size_t i = 1; i <= window; ++i) {
        const double gap = s[order[i - 1]] - s[order[i]];
        if (gap > best) {
          best = gap;
          keep = i;
        }
      }
      break;
    }
  }
  return {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep)};
}

inline std::vector<DiscoveredEntry> select_expressions(const std::vector<double>& s, const clip::TextBank& bank,
                                                       const SelectionConfig& cfg) {
  if (s.size() != bank.size()) throw DataError("select_expressions: score/bank size mismatch");
  std::vector<DiscoveredEntry> out;
  for (std::size_t k : select_ranked(s, cfg)) out.push_back({k, bank.expressions[k], s[k]});
  return out;
}

}  // namespace tcam
