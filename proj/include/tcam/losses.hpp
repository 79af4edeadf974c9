#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "tcam/nn/ops.hpp"

namespace tcam {

enum class Alignment { Ranking, Bce, WeightedBce, Focal };

inline std::string_view to_string(Alignment a) {
  switch (a) {
    case Alignment::Ranking: return "ranking";
    case Alignment::Bce: return "bce";
    case Alignment::WeightedBce: return "weighted_bce";
    case Alignment::Focal: return "focal";
  }
  return "ranking";
}

inline Alignment parse_alignment(std::string_view s) {
  if (s == "ranking") return Alignment::Ranking;
  if (s == "bce") return Alignment::Bce;
  if (s == "weighted_bce") return Alignment::WeightedBce;
  if (s == "focal") return Alignment::Focal;
  throw ConfigError("unknown alignment variant: " + std::string(s));
}

struct LossConfig {
  double tau = 0.1;
  double lambda = 0.1;
  double margin = 0.2;
  double diversity_floor = 0.1;
  double sparsity = 0.01;
  Alignment alignment = Alignment::Ranking;
  double focal_alpha = 0.25;
  double focal_exponent = 2.0;
  bool in_batch = false;

  void validate() const {
    if (!(tau > 0)) throw ConfigError("loss: tau must be positive");
    if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("loss: lambda must lie in [0, 1]");
    if (!(margin >= 0)) throw ConfigError("loss: margin must be >= 0");
    if (!(focal_exponent >= 0)) throw ConfigError("loss: focal exponent must be >= 0");
  }
};

struct LossBreakdown {
  double total = 0, global = 0, spatial = 0, diversity = 0, sparsity = 0, alignment = 0;
  std::size_t skipped_alignment = 0;
};

inline constexpr double kProbClamp = 1e-7;

/// One row of multi-positive InfoNCE: logsumexp(s/tau) - logsumexp(s_P/tau).
/// `sims` is 1 x N_b; `columns` optionally restricts the denominator.
template <class T>
nn::Var<T> infonce_row(const nn::Var<T>& sims, const std::vector<nn::Index>& positives, T tau,
                       const std::vector<nn::Index>* columns = nullptr) {
  if (positives.empty()) throw DataError("global_infonce: empty positive set");
  for (auto k : positives)
    if (k < 0 || k >= sims.cols()) throw DataError("global_infonce: positive index out of range");
  nn::Var<T> logits = scale(sims, T(1) / tau);
  nn::Var<T> denom = columns ? logsumexp_rows(select_cols(logits, *columns)) : logsumexp_rows(logits);
  return sub(denom, logsumexp_rows(select_cols(logits, positives)));
}

/// Mean over rows of multi-positive InfoNCE, sims B x N_b.
template <class T>
nn::Var<T> global_infonce(const nn::Var<T>& sims, const std::vector<std::vector<nn::Index>>& positives, T tau) {
  if (static_cast<nn::Index>(positives.size()) != sims.rows()) {
    throw DataError("global_infonce: one positive set per row required");
  }
  std::vector<nn::Var<T>> rows;
  for (nn::Index b = 0; b < sims.rows(); ++b) {
    rows.push_back(infonce_row(slice_rows(sims, b, 1), positives[static_cast<std::size_t>(b)], tau));
  }
  return mean(concat_rows<T>(rows));
}

/// max(0, floor - std(r)) with population std; r is 1 x N.
template <class T>
nn::Var<T> diversity_loss(const nn::Var<T>& r, T floor = T(0.1)) {
  nn::Var<T> centered = sub(r, scale(sum(r), T(1) / static_cast<T>(r.cols())));
  nn::Var<T> sd = sqrt(mean(square(centered)));
  return relu(add_scalar(neg(sd), floor));
}

template <class T>
nn::Var<T> sparsity_loss(const nn::Var<T>& r, T coefficient = T(0.01)) {
  return scale(sum(abs(r)), coefficient);
}

/// Mean over (j+, j-) pairs of max(0, margin - r_j+ + r_j-).
template <class T>
nn::Var<T> ranking_alignment(const nn::Var<T>& r, const std::vector<nn::Index>& pos,
                             const std::vector<nn::Index>& negs, T margin) {
  nn::Var<T> diff = pairwise_sub(select_cols(r, pos), select_cols(r, negs));
  return mean(relu(add_scalar(neg(diff), margin)));
}

/// BCE family on p = sigmoid(r / tau_s), tau_s = exp(log_tau). `labels` is 1 x N of 0/1.
template <class T>
nn::Var<T> bce_alignment(const nn::Var<T>& r, const nn::Var<T>& log_tau, const nn::Matrix<T>& labels,
                         Alignment variant, T focal_alpha = T(0.25), T focal_exponent = T(2)) {
  nn::Tape<T>& tape = *r.tape();
  const T n = static_cast<T>(r.cols());
  nn::Var<T> p = clamp(sigmoid(mul(r, exp(neg(log_tau)))), T(kProbClamp), T(1 - kProbClamp));
  nn::Var<T> y = tape.constant(labels);
  nn::Var<T> one_minus_y = tape.constant((T(1) - labels.array()).matrix());
  nn::Var<T> log_p = log(p);
  nn::Var<T> log_q = log(add_scalar(neg(p), T(1)));
  switch (variant) {
    case Alignment::Bce:
      return scale(sum(add(mul(y, log_p), mul(one_minus_y, log_q))), T(-1) / n);
    case Alignment::WeightedBce: {
      const T npos = labels.sum();
      const T w = npos > 0 ? (n - npos) / npos : T(1);
      return scale(sum(add(scale(mul(y, log_p), w), mul(one_minus_y, log_q))), T(-1) / n);
    }
    case Alignment::Focal: {
      // p_t = y p + (1 - y)(1 - p)
      nn::Var<T> p_t = add(mul(y, p), mul(one_minus_y, add_scalar(neg(p), T(1))));
      nn::Var<T> modulator = pow_scalar(add_scalar(neg(p_t), T(1)), focal_exponent);
      return scale(sum(mul(modulator, log(p_t))), -focal_alpha / n);
    }
    case Alignment::Ranking: break;
  }
  throw ConfigError("bce_alignment: ranking is not a BCE variant");
}

/// Spatial loss for one expression: diversity + sparsity + alignment.
/// Alignment is skipped (0) when T+ or T- is empty.
template <class T>
struct SpatialTerms {
  nn::Var<T> diversity, sparsity, alignment;
  bool has_alignment = true;
};

template <class T>
SpatialTerms<T> spatial_terms(const nn::Var<T>& r, const std::vector<nn::Index>& pos,
                              const std::vector<nn::Index>& negs, const LossConfig& cfg,
                              const nn::Var<T>* log_tau) {
  SpatialTerms<T> out;
  out.diversity = diversity_loss(r, static_cast<T>(cfg.diversity_floor));
  out.sparsity = sparsity_loss(r, static_cast<T>(cfg.sparsity));
  if (pos.empty() || negs.empty()) {
    out.has_alignment = false;
    return out;
  }
  if (cfg.alignment == Alignment::Ranking) {
    out.alignment = ranking_alignment(r, pos, negs, static_cast<T>(cfg.margin));
  } else {
    if (!log_tau) throw ConfigError("bce alignment requires a temperature");
    nn::Matrix<T> labels = nn::Matrix<T>::Zero(1, r.cols());
    for (auto j : pos) labels(0, j) = T(1);
    out.alignment = bce_alignment(r, *log_tau, labels, cfg.alignment, static_cast<T>(cfg.focal_alpha),
                                  static_cast<T>(cfg.focal_exponent));
  }
  return out;
}

/// total = (1 - lambda) global + lambda spatial.
inline LossBreakdown total_loss(double global, double diversity, double sparsity, double alignment, double lambda) {
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("total_loss: lambda must lie in [0, 1]");
  LossBreakdown b;
  b.global = global;
  b.diversity = diversity;
  b.sparsity = sparsity;
  b.alignment = alignment;
  b.spatial = diversity + sparsity + alignment;
  b.total = (1.0 - lambda) * global + lambda * b.spatial;
  return b;
}

}  // namespace tcam
