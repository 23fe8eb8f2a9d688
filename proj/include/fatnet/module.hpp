#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "fatnet/autodiff.hpp"
#include "fatnet/random.hpp"

namespace fatnet {

enum class Init {
  kFanInUniform,  ///< U(-1/sqrt(fan_in), 1/sqrt(fan_in))
  kZeros,
  kOnes,
  kIdentity,  ///< flattened square identity
};

/// A trainable tensor together with the rule used to initialize it.
template <typename T>
struct Param {
  Var<T> var;
  Init init = Init::kZeros;
  std::size_t fan_in = 1;

  Param() = default;
  Param(Shape shape, Init how, std::size_t fan = 1)
      : var(Tensor<T>(std::move(shape)), true), init(how), fan_in(fan) {}

  const Tensor<T>& value() const { return var.value(); }
};

/**
 * Walks the named state of a module tree. Parameters are trainable;
 * buffers (batch-norm running statistics) are persisted but not trained.
 */
template <typename T>
struct StateVisitor {
  std::function<void(const std::string&, Param<T>&)> on_param;
  std::function<void(const std::string&, Tensor<T>&)> on_buffer;

  void param(const std::string& name, Param<T>& p) const {
    if (on_param) on_param(name, p);
  }
  void buffer(const std::string& name, Tensor<T>& t) const {
    if (on_buffer) on_buffer(name, t);
  }
};

/**
 * Fills a parameter from its own generator, keyed by the parameter name.
 * Adding or removing unrelated modules never shifts another parameter's
 * initial values.
 */
template <typename T>
void init_param(const std::string& name, Param<T>& p, std::uint64_t seed) {
  auto& t = p.var.mutable_value();
  switch (p.init) {
    case Init::kZeros:
      t.fill(T(0));
      break;
    case Init::kOnes:
      t.fill(T(1));
      break;
    case Init::kIdentity: {
      t.fill(T(0));
      const auto n = static_cast<std::size_t>(std::llround(std::sqrt(double(t.size()))));
      for (std::size_t i = 0; i < n; ++i) t[i * n + i] = T(1);
      break;
    }
    case Init::kFanInUniform: {
      Rng rng = substream(seed, "init:" + name);
      const double bound = 1.0 / std::sqrt(double(p.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (auto& v : t.data()) v = T(dist(rng));
      break;
    }
  }
}

template <typename Module>
void init_module(Module& m, std::uint64_t seed) {
  using T = typename Module::value_type;
  StateVisitor<T> v;
  v.on_param = [seed](const std::string& name, Param<T>& p) {
    init_param(name, p, seed);
  };
  m.visit("", v);
}

template <typename Module>
std::vector<std::pair<std::string, Param<typename Module::value_type>*>>
named_params(Module& m) {
  using T = typename Module::value_type;
  std::vector<std::pair<std::string, Param<T>*>> out;
  StateVisitor<T> v;
  v.on_param = [&out](const std::string& name, Param<T>& p) {
    out.emplace_back(name, &p);
  };
  m.visit("", v);
  return out;
}

/// Total trainable scalars: weights, biases, batch-norm gamma and beta.
template <typename Module>
std::size_t count_parameters(Module& m) {
  std::size_t total = 0;
  for (auto& [name, p] : named_params(m)) total += p->value().size();
  return total;
}

inline std::string join_name(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

}  // namespace fatnet
