#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fatnet/tensor.hpp"

namespace fatnet {

/// Moment estimates and hyperparameters for Adam.
template <typename T>
struct AdamState {
  std::size_t step = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  T lr = T(0.001);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T eps = T(1e-8);
};

/**
 * One bias-corrected Adam update over parallel lists of parameters and
 * gradients. Moments are created on the first call. A non-finite gradient
 * aborts the step before any parameter is touched.
 */
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params,
               const std::vector<const Tensor<T>*>& grads, AdamState<T>& state,
               const std::vector<std::string>& names = {}) {
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " parameters but " + std::to_string(grads.size()) +
                         " gradients");
  }
  auto name_of = [&](std::size_t i) {
    return i < names.size() ? names[i] : "#" + std::to_string(i);
  };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape()) {
      throw DimensionError("adam_step: gradient shape " +
                           shape_string(grads[i]->shape()) +
                           " does not match parameter " + name_of(i) + " " +
                           shape_string(params[i]->shape()));
    }
    for (T g : grads[i]->data()) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient in parameter " + name_of(i));
      }
    }
  }
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  } else if (state.m.size() != params.size()) {
    throw DimensionError("adam_step: optimizer state tracks " +
                         std::to_string(state.m.size()) + " parameters, got " +
                         std::to_string(params.size()));
  }

  state.step += 1;
  const T t = T(state.step);
  const T bc1 = T(1) - std::pow(state.beta1, t);
  const T bc2 = T(1) - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (T(1) - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (T(1) - state.beta2) * g[j] * g[j];
      const T mhat = m[j] / bc1;
      const T vhat = v[j] / bc2;
      p[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace fatnet
