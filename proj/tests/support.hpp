#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fatnet/gradcheck.hpp"
#include "fatnet/module.hpp"

namespace fatnet::testing {

template <typename Module>
void randomize(Module& m, std::uint64_t seed, double scale = 1.0) {
  randomize_state(m, seed, scale);
}

template <typename Module>
std::vector<std::pair<std::string, Var<typename Module::value_type>>> param_vars(Module& m) {
  std::vector<std::pair<std::string, Var<typename Module::value_type>>> out;
  for (auto& [name, p] : named_params(m)) out.emplace_back(name, p->var);
  return out;
}

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data()) v = T(d(rng));
  return t;
}

/// Rows of x reordered so that output row r is input row perm[r].
template <typename T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<std::size_t>& perm) {
  Tensor<T> out(x.shape());
  const std::size_t c = x.cols();
  for (std::size_t r = 0; r < perm.size(); ++r)
    std::copy_n(x.raw() + perm[r] * c, c, out.raw() + r * c);
  return out;
}

/// Fixed random projection to a scalar, for gradient checks.
template <typename T>
Var<T> weighted_sum(const Var<T>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, Var<T>(random_tensor<T>(y.shape(), rng))));
}

}  // namespace fatnet::testing
