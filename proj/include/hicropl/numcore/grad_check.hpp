// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "hicropl/numcore/tensor.hpp"

namespace hicropl {

struct GradCheckOptions {
  double eps = 1e-5;
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is ~0 are judged on absolute error instead.
  double floor = 1e-6;
  // 0 probes every coordinate; otherwise a seeded sample of that many per input.
  std::size_t max_probes_per_input = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Compares reverse-mode gradients of the scalar `f` with central differences
// (f(x+eps) - f(x-eps)) / (2 eps) at each probed coordinate of `inputs`.
// `f` must rebuild its graph from the current values of the inputs on every
// call. Input values are restored before returning.
inline GradCheckResult grad_check_detailed(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                                           const GradCheckOptions& options = {}) {
  if (!(options.eps >= 1e-6 && options.eps <= 1e-3)) throw ContractError("grad_check: eps must lie in [1e-6, 1e-3]");
  std::vector<bool> previous(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    previous[i] = inputs[i].requires_grad();
    inputs[i].set_requires_grad(true);
    inputs[i].zero_grad();
  }

  const auto evaluate = [&f]() {
    Tensor y = f();
    if (y.numel() != 1) throw ContractError("grad_check: f must be scalar-valued, got " + shape_str(y.shape()));
    const double v = y.item();
    if (!std::isfinite(v)) throw NumericError("grad_check: f is not finite at a probe point");
    return v;
  };

  {
    Tensor y = f();
    if (y.numel() != 1) throw ContractError("grad_check: f must be scalar-valued, got " + shape_str(y.shape()));
    if (!std::isfinite(y.item())) throw NumericError("grad_check: f is not finite at the base point");
    backward(y);
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  for (std::size_t in = 0; in < inputs.size(); ++in) {
    Tensor& x = inputs[in];
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());

    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_probes_per_input && coords.size() > options.max_probes_per_input) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_probes_per_input);
      std::sort(coords.begin(), coords.end());
    }

    auto values = x.mutable_data();
    for (std::size_t c : coords) {
      const double saved = values[c];
      values[c] = saved + options.eps;
      const double up = evaluate();
      values[c] = saved - options.eps;
      const double down = evaluate();
      values[c] = saved;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double err = std::fabs(analytic[c] - numeric) /
                         std::max({std::fabs(analytic[c]), std::fabs(numeric), options.floor});
      ++result.probes;
      if (err >= result.max_rel_error) {
        result.max_rel_error = err;
        result.worst_input = in;
        result.worst_index = c;
        result.worst_analytic = analytic[c];
        result.worst_numeric = numeric;
      }
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].zero_grad();
    inputs[i].set_requires_grad(previous[i]);
  }
  return result;
}

inline double grad_check(const std::function<Tensor()>& f, std::vector<Tensor> inputs, double eps = 1e-5) {
  GradCheckOptions options;
  options.eps = eps;
  return grad_check_detailed(f, std::move(inputs), options).max_rel_error;
}

}  // namespace hicropl
