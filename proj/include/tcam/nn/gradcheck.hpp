#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "tcam/nn/tape.hpp"

namespace tcam::nn {

struct GradCheckEntry {
  std::string name;
  std::size_t scalars = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;
  double max_rel_error = 0.0;
  bool passed = true;
};

struct GradCheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  // Denominator floor: below this magnitude errors are effectively absolute.
  double floor = 1e-6;
  // Restrict the check to these parameter names (empty = all).
  std::set<std::string> only;
};

/// max(|a - n|) / max(|a|, |n|, floor), 0 when both vanish.
inline double relative_error(double analytic, double numeric, double floor) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// for every scalar of every (selected) parameter. Runs in 64-bit only.
inline GradCheckReport finite_diff_check(ParamStore<double>& params,
                                         const std::function<Var<double>(Tape<double>&)>& loss_fn,
                                         const GradCheckOptions& opts = {}) {
  auto evaluate = [&]() {
    Tape<double> tape(false);
    return loss_fn(tape).scalar();
  };

  const double first = evaluate();
  const double second = evaluate();
  if (first != second) {
    throw NumericError("finite_diff_check: loss_fn is nondeterministic (" + std::to_string(first) +
                       " vs " + std::to_string(second) + ")");
  }

  params.zero_grad();
  {
    Tape<double> tape;
    Var<double> loss = loss_fn(tape);
    tape.backward(loss);
    tape.accumulate_parameter_grads();
  }

  GradCheckReport report;
  report.tolerance = opts.tolerance;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Parameter<double>& param = params[p];
    if (!opts.only.empty() && !opts.only.contains(param.name)) continue;
    GradCheckEntry entry;
    entry.name = param.name;
    entry.scalars = static_cast<std::size_t>(param.value.size());
    for (Index i = 0; i < param.value.size(); ++i) {
      double& x = param.value.data()[i];
      const double saved = x;
      x = saved + opts.step;
      const double up = evaluate();
      x = saved - opts.step;
      const double down = evaluate();
      x = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double analytic = param.grad.data()[i];
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(analytic - numeric));
      entry.max_rel_error =
          std::max(entry.max_rel_error, relative_error(analytic, numeric, opts.floor));
    }
    entry.passed = entry.max_rel_error <= opts.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.passed = report.passed && entry.passed;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tcam::nn
