#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tcam/nn/ops.hpp"

namespace tcam {

struct GroundingConfig {
  nn::Index heads = 4;
  nn::Index head_dim = 0;  // 0 means 512 / heads
  nn::Index embed_dim = 512;
  double init_noise = 0.01;
  double init_temperature = 1.0;

  nn::Index dh() const { return head_dim > 0 ? head_dim : embed_dim / heads; }
  void validate() const {
    if (heads < 1) throw ConfigError("grounding: heads must be >= 1");
    if (head_dim <= 0 && embed_dim % heads != 0) {
      throw ConfigError("grounding: " + std::to_string(heads) + " heads do not divide 512");
    }
    if (!(init_temperature > 0)) throw ConfigError("grounding: temperature must be positive");
  }
};

namespace detail {

/// Head h's block is columns [h*dh, (h+1)*dh) of the identity (cyclically),
/// plus Gaussian noise.
template <class T>
nn::Matrix<T> block_identity_plus_noise(nn::Index in, nn::Index heads, nn::Index dh, double sd, Rng& rng) {
  nn::Matrix<T> m(in, heads * dh);
  for (nn::Index i = 0; i < in; ++i) {
    for (nn::Index c = 0; c < heads * dh; ++c) {
      const double id = (c % in) == i ? 1.0 : 0.0;
      m(i, c) = static_cast<T>(id + rng.normal(0.0, sd));
    }
  }
  return m;
}

}  // namespace detail

/// Relevance r_ij = mean over heads of cos(Q_h e_i, K_h m_j). Q and K store
/// all heads side by side, each (512 x heads*dh).
template <class T>
struct Grounding {
  GroundingConfig config;
  nn::Parameter<T>* query = nullptr;
  nn::Parameter<T>* key = nullptr;
  nn::Parameter<T>* log_tau = nullptr;

  static Grounding make(nn::ParamStore<T>& store, const GroundingConfig& cfg, Rng& rng) {
    cfg.validate();
    Grounding g;
    g.config = cfg;
    const auto dh = cfg.dh();
    const auto in = cfg.embed_dim;
    g.query = &store.get_or_create("grounding.query", in, cfg.heads * dh,
                                   [&](nn::Index, nn::Index) {
                                     return detail::block_identity_plus_noise<T>(in, cfg.heads, dh, cfg.init_noise, rng);
                                   });
    g.key = &store.get_or_create("grounding.key", in, cfg.heads * dh, [&](nn::Index, nn::Index) {
      return detail::block_identity_plus_noise<T>(in, cfg.heads, dh, cfg.init_noise, rng);
    });
    g.log_tau = &store.get_or_create("grounding.log_tau", 1, 1, [&](nn::Index, nn::Index) {
      return nn::scalar_matrix<T>(static_cast<T>(std::log(cfg.init_temperature)));
    }, false);
    return g;
  }

  /// text: E x 512, descriptors: N x 512 -> E x N scores.
  nn::Var<T> operator()(nn::Tape<T>& tape, const nn::Var<T>& text, const nn::Var<T>& descriptors) const {
    if (descriptors.rows() < 1) throw DataError("relevance: no descriptors");
    const auto dh = config.dh();
    nn::Var<T> q = normalize_rows(matmul(text, tape.parameter(*query)), dh, "relevance: projected query");
    // Project descriptors in content order so a track's key does not depend
    // on where it sits in the input.
    const auto order = nn::canonical_row_order(descriptors.value());
    nn::Var<T> k = normalize_rows(matmul(gather_rows(descriptors, order), tape.parameter(*key)), dh,
                                  "relevance: projected key");
    k = gather_rows(k, nn::inverse_permutation(order));
    return scale(matmul_nt(q, k), T(1) / static_cast<T>(config.heads));
  }

  /// log tau_s as a tape leaf; tau_s = exp(log_tau) stays positive.
  nn::Var<T> log_temperature(nn::Tape<T>& tape) const { return tape.parameter(*log_tau); }
  T temperature_value() const { return std::exp(log_tau->value(0, 0)); }

  /// Per-head cosine matrix for one text embedding: heads x N.
  nn::Matrix<T> head_scores(const nn::Matrix<T>& text_row, const nn::Matrix<T>& descriptors) const {
    const auto dh = config.dh();
    const nn::Matrix<T> q = text_row * query->value;
    const nn::Matrix<T> k = descriptors * key->value;
    nn::Matrix<T> out(config.heads, descriptors.rows());
    for (nn::Index h = 0; h < config.heads; ++h) {
      const auto qh = q.row(0).segment(h * dh, dh);
      const T qn = qh.norm();
      if (!(qn > T(0))) throw NumericError("relevance: projected query has zero norm");
      for (nn::Index j = 0; j < descriptors.rows(); ++j) {
        const auto kh = k.row(j).segment(h * dh, dh);
        const T kn = kh.norm();
        if (!(kn > T(0))) throw NumericError("relevance: projected key has zero norm");
        out(h, j) = qh.dot(kh) / (qn * kn);
      }
    }
    return out;
  }
};

inline double relevance_probability(double r, double tau) {
  if (!(tau > 0)) throw ConfigError("relevance_probability: tau must be positive");
  return 1.0 / (1.0 + std::exp(-r / tau));
}

enum class SelectMode { Threshold, Otsu };

/// Otsu cut over sorted distinct split points: returns the threshold value
/// (the smallest score of the upper class) maximizing between-class variance.
inline double otsu_threshold(const std::vector<double>& scores) {
  if (scores.empty()) throw DataError("select_tracks: empty score vector");
  std::vector<double> s = scores;
  std::sort(s.begin(), s.end());
  const std::size_t n = s.size();
  if (s.front() == s.back()) return s.front();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + s[i];
  double best = -1.0, cut = s.back();
  for (std::size_t k = 1; k < n; ++k) {  // lower = s[0..k), upper = s[k..n)
    if (s[k] == s[k - 1]) continue;
    const double w0 = static_cast<double>(k) / n, w1 = 1.0 - w0;
    const double m0 = prefix[k] / k, m1 = (prefix[n] - prefix[k]) / (n - k);
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      cut = s[k];
    }
  }
  return cut;
}

/// Indices j with r_j >= threshold (inclusive), or with the Otsu threshold.
inline std::vector<int> select_tracks(const std::vector<double>& scores, SelectMode mode, double threshold = 0.0) {
  if (scores.empty()) throw DataError("select_tracks: empty score vector");
  const double cut = mode == SelectMode::Otsu ? otsu_threshold(scores) : threshold;
  std::vector<int> out;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (scores[j] >= cut) out.push_back(static_cast<int>(j));
  return out;
}

}  // namespace tcam
