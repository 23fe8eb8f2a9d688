#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fatnet/autodiff.hpp"
#include "fatnet/module.hpp"

namespace fatnet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_name;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  /// Elements whose +-h probe straddles a jump or kink (a kNN neighbor set
  /// or max-pool winner changing); they are counted but not scored.
  std::size_t discontinuities = 0;
  std::string first_discontinuity;

  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/**
 * |analytic - numeric| / max(|analytic|, |numeric|, 1e-6). The floor sits
 * above what 64-bit central differences resolve with h = 1e-5 (loss
 * roundoff / 2h is about 1e-11), so tiny gradients are compared in
 * absolute terms instead of amplifying that noise.
 */
inline double gradient_rel_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// One-sided slopes that disagree: the probe interval holds a kink or jump.
inline bool straddles_discontinuity(double slope_up, double slope_down) {
  return std::abs(slope_up - slope_down) >
         0.5 * (std::abs(slope_up) + std::abs(slope_down)) + 1e-4;
}

/**
 * Compares reverse-mode gradients against central differences.
 *
 * `loss` must rebuild the graph from the current parameter values on every
 * call and return a scalar. Each element is perturbed by +-h in place and
 * restored exactly afterwards.
 */
template <typename T, typename LossFn>
GradCheckResult check_gradients(std::vector<std::pair<std::string, Var<T>>> params,
                                LossFn&& loss, double h = 1e-5) {
  for (auto& [name, p] : params) p.zero_grad();
  {
    Var<T> l = loss();
    backward(l);
  }
  std::vector<Tensor<T>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p.grad());

  GradCheckResult result;
  NoGradGuard guard;
  const T centre = loss().value()[0];
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& [name, p] = params[pi];
    auto& values = p.mutable_value();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = saved + T(h);
      const T up = loss().value()[0];
      values[i] = saved - T(h);
      const T down = loss().value()[0];
      values[i] = saved;
      // Differenced in T so a wider type keeps its extra digits.
      const double numeric = double((up - down) / T(2 * h));
      const double a = double(analytic[pi][i]);
      ++result.checked;
      if (straddles_discontinuity(double((up - centre) / T(h)), double((centre - down) / T(h)))) {
        if (result.discontinuities++ == 0)
          result.first_discontinuity = name + "[" + std::to_string(i) + "]";
        continue;
      }
      const double err = gradient_rel_error(a, numeric);
      if (err > result.max_rel_error || result.worst_name.empty()) {
        result.max_rel_error = err;
        result.worst_name = name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

/**
 * Replaces every parameter and batch-norm buffer with random values so no
 * gradient path is structurally dead (zero output weights, unit gammas).
 * `scale` multiplies the weight and shift ranges.
 */
template <typename Module>
void randomize_state(Module& m, std::uint64_t seed, double scale = 1.0) {
  using T = typename Module::value_type;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  std::uniform_real_distribution<double> var(0.5, 1.5);
  auto ends_with = [](const std::string& s, const std::string& tail) {
    return s.size() >= tail.size() && s.compare(s.size() - tail.size(), tail.size(), tail) == 0;
  };
  StateVisitor<T> v;
  // Gammas stay away from zero; a stack of small gammas shrinks gradients
  // below what central differences can resolve.
  // Matrices use variance-preserving bounds so activations neither vanish
  // nor saturate the gates.
  v.on_param = [&](const std::string& name, Param<T>& p) {
    auto& t = p.var.mutable_value();
    if (ends_with(name, "gamma")) {
      for (auto& x : t.data()) x = T(var(rng));
    } else if (t.rank() == 2) {
      std::uniform_real_distribution<double> w(-1.0, 1.0);
      const double bound = scale * std::sqrt(3.0 / double(t.rows()));
      for (auto& x : t.data()) x = T(bound * w(rng));
    } else {
      for (auto& x : t.data()) x = T(0.5 * u(rng));
    }
  };
  v.on_buffer = [&](const std::string& name, Tensor<T>& t) {
    const bool is_var = ends_with(name, "var");
    for (auto& x : t.data()) x = T(is_var ? var(rng) : 0.3 * u(rng));
  };
  m.visit("", v);
}

}  // namespace fatnet
