#pragma once

// Finite-difference gradient verification. The scalar function under test is
// re-evaluated with each chosen parameter entry displaced by +/- eps, and the
// central-difference slope is compared against the analytic gradient using a
// scale-aware relative error.

#include <cmath>
#include <cstddef>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mjave/errors.hpp"
#include "mjave/tensor.hpp"

namespace mjave {

struct GradCheckEntry {
  std::string name;
  std::size_t flat_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  GradCheckEntry worst;
  std::vector<GradCheckEntry> entries;

  bool within(double tol) const { return max_rel_error <= tol; }
};

inline double grad_check_rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) /
         std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

// One named parameter tensor plus the entries to probe (empty = all).
struct GradCheckTarget {
  std::string name;
  Tensor<double> tensor;
  std::vector<std::size_t> indices;
};

// `loss_fn` must rebuild the graph from the current parameter values and
// return the scalar loss. Analytic gradients are taken from one clean
// backward pass before any probing.
inline GradCheckResult grad_check(
    const std::function<Tensor<double>()>& loss_fn,
    std::vector<GradCheckTarget> targets, double eps = 1e-5) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    std::ostringstream os;
    os << "grad_check: eps " << eps << " outside [1e-7, 1e-3]";
    throw ConfigError(os.str());
  }

  for (auto& t : targets) t.tensor.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(targets.size());
  for (auto& t : targets) analytic.push_back(t.tensor.grad());

  GradCheckResult result;
  for (std::size_t ti = 0; ti < targets.size(); ++ti) {
    auto& target = targets[ti];
    auto& values = target.tensor.mutable_value();
    std::vector<std::size_t> indices = target.indices;
    if (indices.empty()) {
      indices.resize(values.size());
      for (std::size_t i = 0; i < values.size(); ++i) indices[i] = i;
    }
    for (std::size_t idx : indices) {
      const double saved = values[idx];
      values[idx] = saved + eps;
      const double up = loss_fn().item();
      values[idx] = saved - eps;
      const double down = loss_fn().item();
      values[idx] = saved;

      GradCheckEntry e;
      e.name = target.name;
      e.flat_index = idx;
      e.analytic = analytic[ti][idx];
      e.numeric = (up - down) / (2.0 * eps);
      e.rel_error = grad_check_rel_error(e.analytic, e.numeric);
      if (e.rel_error >= result.max_rel_error) {
        result.max_rel_error = e.rel_error;
        result.worst = e;
      }
      result.entries.push_back(std::move(e));
    }
  }
  return result;
}

}  // namespace mjave
