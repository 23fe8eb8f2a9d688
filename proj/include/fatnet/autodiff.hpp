#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fatnet/tensor.hpp"

namespace fatnet {

/**
 * A value in the differentiation graph.
 *
 * `grad` has the shape of `value` once allocated; it is created lazily
 * the first time a gradient flows into the node. `backward_fn` reads the
 * node's own grad and accumulates contributions into the parents.
 */
template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  bool requires_grad = false;

  Tensor<T>& grad_ref() {
    if (grad.empty()) grad = Tensor<T>(value.shape());
    return grad;
  }
};

namespace detail {
inline bool& grad_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_enabled_flag()) {
    detail::grad_enabled_flag() = false;
  }
  ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Handle to a graph node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;

  explicit Var(Tensor<T> value, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  /// Direct access for optimizers and checkpoint loading. Not recorded.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; zeros when nothing has flowed in yet.
  const Tensor<T>& grad() const { return node_->grad_ref(); }
  void zero_grad() {
    if (!node_->grad.empty()) node_->grad.fill(T(0));
  }

  const std::shared_ptr<Node<T>>& node() const noexcept { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

/// Builds the result node, recording parents only when a gradient can flow.
template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<Var<T>> inputs,
                   std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any && grad_enabled()) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const auto& in : inputs) node->parents.push_back(in.node());
    node->backward_fn = std::move(fn);
  }
  return Var<T>(std::move(node));
}

/// Parent gradient buffer, or nullptr when that parent takes no gradient.
template <typename T>
T* parent_grad(Node<T>& self, std::size_t i) {
  auto& p = *self.parents[i];
  return p.requires_grad ? p.grad_ref().raw() : nullptr;
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw DimensionError(msg);
}

struct AxisSplit {
  std::size_t outer, len, inner;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw DimensionError("reduction axis " + std::to_string(axis) +
                         " out of range for shape " + shape_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  if (s.len == 0) throw DimensionError("reduction over an empty axis");
  return s;
}

inline Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i)
    if (i != axis) out.push_back(shape[i]);
  if (out.empty()) out.push_back(1);
  return out;
}

}  // namespace detail

/**
 * Reverse-mode sweep from a scalar root.
 *
 * Seeds the root gradient with one and visits nodes in reverse topological
 * order, so every node's gradient is complete before it is propagated.
 */
template <typename T>
void backward(const Var<T>& root) {
  if (root.value().size() != 1) {
    throw DimensionError("backward needs a scalar root, got shape " +
                         shape_string(root.shape()));
  }
  if (!root.requires_grad()) return;

  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_ref()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& n = **it;
    if (n.backward_fn && !n.grad.empty()) n.backward_fn(n);
  }
}

// ---------------------------------------------------------------------------
// Primitive operations
// ---------------------------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw DimensionError("matmul shape mismatch: " + shape_string(av.shape()) +
                         " x " + shape_string(bv.shape()));
  }
  const std::size_t m = av.rows(), p = av.cols(), q = bv.cols();
  Tensor<T> out({m, q});
  detail::gemm_acc(av.raw(), bv.raw(), out.raw(), m, p, q);
  return detail::make_result<T>(std::move(out), {a, b}, [m, p, q](Node<T>& self) {
    const T* g = self.grad.raw();
    const auto& A = self.parents[0]->value;
    const auto& B = self.parents[1]->value;
    if (T* ga = detail::parent_grad(self, 0)) {
      auto bt = detail::transpose(B.raw(), p, q);
      detail::gemm_acc(g, bt.data(), ga, m, q, p);
    }
    if (T* gb = detail::parent_grad(self, 1)) {
      auto at = detail::transpose(A.raw(), m, p);
      detail::gemm_acc(at.data(), g, gb, p, m, q);
    }
  });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "add shape mismatch: " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& g = self.grad;
    for (std::size_t p = 0; p < 2; ++p)
      if (T* gp = detail::parent_grad(self, p))
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i];
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "sub shape mismatch: " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& g = self.grad;
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    if (T* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
  });
}

/// Elementwise product.
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require(a.shape() == b.shape(),
                  "mul shape mismatch: " + shape_string(a.shape()) + " vs " +
                      shape_string(b.shape()));
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return detail::make_result<T>(std::move(out), {a, b}, [](Node<T>& self) {
    const auto& g = self.grad;
    const auto& av = self.parents[0]->value;
    const auto& bv = self.parents[1]->value;
    if (T* ga = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    if (T* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v *= s;
  return detail::make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
    const auto& g = self.grad;
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s;
  });
}

/// x[R x C] + bias[C] broadcast over rows.
template <typename T>
Var<T> add_row(const Var<T>& x, const Var<T>& bias) {
  const auto& xv = x.value();
  detail::require(xv.rank() == 2 && bias.value().size() == xv.cols(),
                  "add_row shape mismatch: " + shape_string(xv.shape()) +
                      " + " + shape_string(bias.shape()));
  const std::size_t r = xv.rows(), c = xv.cols();
  Tensor<T> out = xv;
  const T* b = bias.value().raw();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  return detail::make_result<T>(std::move(out), {x, bias}, [r, c](Node<T>& self) {
    const T* g = self.grad.raw();
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < r * c; ++i) gx[i] += g[i];
    if (T* gb = detail::parent_grad(self, 1))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += g[i * c + j];
  });
}

/// Elementwise max(x, slope * x).
template <typename T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  if (!(slope > T(0) && slope < T(1))) {
    throw InvalidArgument("leaky_relu slope must lie in (0, 1)");
  }
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T(0) ? v : slope * v;
  return detail::make_result<T>(std::move(out), {x}, [slope](Node<T>& self) {
    const auto& g = self.grad;
    const auto& xv = self.parents[0]->value;
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += xv[i] > T(0) ? g[i] : slope * g[i];
  });
}

/// Clamped to the open interval so saturated gates never reach 0 or 1 exactly.
template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = std::clamp(T(1) / (T(1) + std::exp(-v)), lo, hi);
  return detail::make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    const auto& g = self.grad;
    const auto& y = self.value;
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i)
        gx[i] += g[i] * y[i] * (T(1) - y[i]);
  });
}

/// Same data, new shape.
template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return detail::make_result<T>(std::move(out), {x}, [](Node<T>& self) {
    const auto& g = self.grad;
    if (T* gx = detail::parent_grad(self, 0))
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

/**
 * Maximum along `axis`; the axis is removed from the shape.
 * The gradient goes to the first (lowest-index) maximal element.
 */
template <typename T>
Var<T> reduce_max(const Var<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  const auto& xv = x.value();
  Tensor<T> out(detail::drop_axis(x.shape(), axis));
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      std::size_t best = o * s.len * s.inner + in;
      for (std::size_t l = 1; l < s.len; ++l) {
        const std::size_t idx = (o * s.len + l) * s.inner + in;
        if (xv[idx] > xv[best]) best = idx;
      }
      out[o * s.inner + in] = xv[best];
      arg[o * s.inner + in] = best;
    }
  }
  return detail::make_result<T>(
      std::move(out), {x}, [arg = std::move(arg)](Node<T>& self) {
        const auto& g = self.grad;
        if (T* gx = detail::parent_grad(self, 0))
          for (std::size_t i = 0; i < g.size(); ++i) gx[arg[i]] += g[i];
      });
}

/**
 * Mean along `axis`; the axis is removed from the shape.
 * Summation is order-free, so permuting the reduced axis gives bitwise
 * identical results.
 */
template <typename T>
Var<T> reduce_mean(const Var<T>& x, std::size_t axis) {
  const auto s = detail::split_axis(x.shape(), axis);
  const auto& xv = x.value();
  Tensor<T> out(detail::drop_axis(x.shape(), axis));
  std::vector<T> buf(s.len);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      for (std::size_t l = 0; l < s.len; ++l)
        buf[l] = xv[(o * s.len + l) * s.inner + in];
      out[o * s.inner + in] = detail::order_free_sum(buf) / T(s.len);
    }
  }
  return detail::make_result<T>(std::move(out), {x}, [s](Node<T>& self) {
    const auto& g = self.grad;
    if (T* gx = detail::parent_grad(self, 0)) {
      const T inv = T(1) / T(s.len);
      for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t l = 0; l < s.len; ++l)
          for (std::size_t in = 0; in < s.inner; ++in)
            gx[(o * s.len + l) * s.inner + in] += g[o * s.inner + in] * inv;
    }
  });
}

/// Sum of all elements as a one-element tensor.
template <typename T>
Var<T> sum(const Var<T>& x) {
  T total = T(0);
  for (T v : x.value().data()) total += v;
  return detail::make_result<T>(Tensor<T>({1}, total), {x}, [](Node<T>& self) {
    const T g = self.grad[0];
    if (T* gx = detail::parent_grad(self, 0)) {
      const std::size_t n = self.parents[0]->value.size();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    }
  });
}

/// Column-wise concatenation of rank-2 tensors with equal row counts.
template <typename T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  detail::require(!parts.empty(), "concat_cols needs at least one input");
  const std::size_t r = parts[0].value().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    detail::require(p.value().rank() == 2 && p.value().rows() == r,
                    "concat_cols row mismatch at shape " +
                        shape_string(p.shape()));
    widths.push_back(p.value().cols());
    total += widths.back();
  }
  Tensor<T> out({r, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = parts[k].value();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(v.raw() + i * widths[k], widths[k],
                  out.raw() + i * total + off);
    off += widths[k];
  }
  return detail::make_result<T>(std::move(out), parts,
                                [r, total, widths](Node<T>& self) {
    const T* g = self.grad.raw();
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      if (T* gp = detail::parent_grad(self, k))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            gp[i * widths[k] + j] += g[i * total + off + j];
      off += widths[k];
    }
  });
}

/**
 * Neighbor differences for a flat neighbor list.
 *
 * x is [R x D]; `neighbors` holds R*k global row indices (row i owns
 * entries [i*k, (i+1)*k)). Output row i*k+j is x[neighbors[i*k+j]] - x[i],
 * or [x[i] : x[nbr] - x[i]] (width 2D) when `with_center` is set.
 */
template <typename T>
Var<T> gather_edges(const Var<T>& x, std::vector<std::size_t> neighbors,
                    std::size_t k, bool with_center = false) {
  const auto& xv = x.value();
  detail::require(xv.rank() == 2 && neighbors.size() == xv.rows() * k,
                  "gather_edges expects rows*k neighbor entries");
  const std::size_t r = xv.rows(), d = xv.cols();
  const std::size_t w = with_center ? 2 * d : d;
  const std::size_t off = with_center ? d : 0;
  for (std::size_t n : neighbors)
    if (n >= r) throw InvalidArgument("neighbor index out of range");
  Tensor<T> out({r * k, w});
  for (std::size_t i = 0; i < r; ++i) {
    const T* xi = xv.raw() + i * d;
    for (std::size_t j = 0; j < k; ++j) {
      T* o = out.raw() + (i * k + j) * w;
      const T* xn = xv.raw() + neighbors[i * k + j] * d;
      if (with_center) std::copy_n(xi, d, o);
      for (std::size_t c = 0; c < d; ++c) o[off + c] = xn[c] - xi[c];
    }
  }
  return detail::make_result<T>(
      std::move(out), {x},
      [r, d, k, w, off, with_center, nb = std::move(neighbors)](Node<T>& self) {
        T* gx = detail::parent_grad(self, 0);
        if (!gx) return;
        const T* g = self.grad.raw();
        for (std::size_t i = 0; i < r; ++i) {
          T* gi = gx + i * d;
          for (std::size_t j = 0; j < k; ++j) {
            const T* go = g + (i * k + j) * w;
            T* gn = gx + nb[i * k + j] * d;
            for (std::size_t c = 0; c < d; ++c) {
              gn[c] += go[off + c];
              gi[c] -= go[off + c];
            }
            if (with_center)
              for (std::size_t c = 0; c < d; ++c) gi[c] += go[c];
          }
        }
      });
}

/// x[G*M x D] scaled row-block-wise: rows of block g multiply gates[g].
template <typename T>
Var<T> scale_groups(const Var<T>& x, const Var<T>& gates) {
  const auto& xv = x.value();
  const auto& gv = gates.value();
  detail::require(xv.rank() == 2 && gv.rank() == 2 && gv.cols() == xv.cols() &&
                      xv.rows() % gv.rows() == 0,
                  "scale_groups shape mismatch: " + shape_string(xv.shape()) +
                      " by " + shape_string(gv.shape()));
  const std::size_t groups = gv.rows(), d = xv.cols();
  const std::size_t m = xv.rows() / groups;
  Tensor<T> out = xv;
  for (std::size_t g = 0; g < groups; ++g)
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < d; ++c)
        out[(g * m + i) * d + c] *= gv[g * d + c];
  return detail::make_result<T>(std::move(out), {x, gates},
                                [groups, m, d](Node<T>& self) {
    const T* g = self.grad.raw();
    const auto& xv = self.parents[0]->value;
    const auto& gv = self.parents[1]->value;
    T* gx = detail::parent_grad(self, 0);
    T* gg = detail::parent_grad(self, 1);
    for (std::size_t b = 0; b < groups; ++b)
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t c = 0; c < d; ++c) {
          const std::size_t idx = (b * m + i) * d + c;
          if (gx) gx[idx] += g[idx] * gv[b * d + c];
          if (gg) gg[b * d + c] += g[idx] * xv[idx];
        }
  });
}

/// Repeats each row of g[G x D] m times: output is [G*m x D].
template <typename T>
Var<T> tile_rows(const Var<T>& g, std::size_t m) {
  const auto& gv = g.value();
  detail::require(gv.rank() == 2, "tile_rows expects a rank-2 tensor");
  const std::size_t groups = gv.rows(), d = gv.cols();
  Tensor<T> out({groups * m, d});
  for (std::size_t b = 0; b < groups; ++b)
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(gv.raw() + b * d, d, out.raw() + (b * m + i) * d);
  return detail::make_result<T>(std::move(out), {g}, [groups, m, d](Node<T>& self) {
    const T* gr = self.grad.raw();
    if (T* gg = detail::parent_grad(self, 0))
      for (std::size_t b = 0; b < groups; ++b)
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t c = 0; c < d; ++c)
            gg[b * d + c] += gr[(b * m + i) * d + c];
  });
}

/**
 * Per-block right multiplication: rows of block b in x[G*M x P] are
 * multiplied by t[b] reshaped row-major to P x Q.
 */
template <typename T>
Var<T> batched_transform(const Var<T>& x, const Var<T>& t, std::size_t q) {
  const auto& xv = x.value();
  const auto& tv = t.value();
  detail::require(xv.rank() == 2 && tv.rank() == 2 &&
                      tv.cols() == xv.cols() * q && xv.rows() % tv.rows() == 0,
                  "batched_transform shape mismatch: " +
                      shape_string(xv.shape()) + " by " +
                      shape_string(tv.shape()));
  const std::size_t groups = tv.rows(), p = xv.cols();
  const std::size_t m = xv.rows() / groups;
  Tensor<T> out({groups * m, q});
  for (std::size_t b = 0; b < groups; ++b)
    detail::gemm_acc(xv.raw() + b * m * p, tv.raw() + b * p * q,
                     out.raw() + b * m * q, m, p, q);
  return detail::make_result<T>(std::move(out), {x, t},
                                [groups, m, p, q](Node<T>& self) {
    const T* g = self.grad.raw();
    const auto& xv = self.parents[0]->value;
    const auto& tv = self.parents[1]->value;
    T* gx = detail::parent_grad(self, 0);
    T* gt = detail::parent_grad(self, 1);
    for (std::size_t b = 0; b < groups; ++b) {
      if (gx) {
        auto tt = detail::transpose(tv.raw() + b * p * q, p, q);
        detail::gemm_acc(g + b * m * q, tt.data(), gx + b * m * p, m, q, p);
      }
      if (gt) {
        auto xt = detail::transpose(xv.raw() + b * m * p, m, p);
        detail::gemm_acc(xt.data(), g + b * m * q, gt + b * p * q, p, m, q);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class Mode { kTrain, kEval };

/// Running statistics of one batch-norm site. Starts at mean 0 / var 1.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  T momentum = T(0.9);
  T eps = T(1e-5);

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean({channels}, T(0)), running_var({channels}, T(1)) {}
};

/**
 * Per-channel normalization of x[R x C] (channels last).
 *
 * Train mode uses biased batch statistics over all R rows and updates the
 * running averages as new = momentum*old + (1-momentum)*batch. Eval mode
 * normalizes with the running statistics.
 */
template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  BatchNormState<T>& state, Mode mode) {
  const auto& xv = x.value();
  detail::require(xv.rank() == 2 && gamma.value().size() == xv.cols() &&
                      beta.value().size() == xv.cols() &&
                      state.running_mean.size() == xv.cols(),
                  "batch_norm channel mismatch: input " +
                      shape_string(xv.shape()) + ", gamma " +
                      shape_string(gamma.shape()));
  const std::size_t r = xv.rows(), c = xv.cols();
  std::vector<T> mean(c), inv_std(c);
  if (mode == Mode::kTrain) {
    std::vector<double> s(c, 0.0), s2(c, 0.0);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) s[j] += double(xv[i * c + j]);
    for (std::size_t j = 0; j < c; ++j) s[j] /= double(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double dv = double(xv[i * c + j]) - s[j];
        s2[j] += dv * dv;
      }
    for (std::size_t j = 0; j < c; ++j) {
      const double var = s2[j] / double(r);
      mean[j] = T(s[j]);
      inv_std[j] = T(1.0 / std::sqrt(var + double(state.eps)));
      state.running_mean[j] = state.momentum * state.running_mean[j] +
                              (T(1) - state.momentum) * T(s[j]);
      state.running_var[j] = state.momentum * state.running_var[j] +
                             (T(1) - state.momentum) * T(var);
    }
  } else {
    for (std::size_t j = 0; j < c; ++j) {
      mean[j] = state.running_mean[j];
      inv_std[j] = T(1) / std::sqrt(state.running_var[j] + state.eps);
    }
  }

  Tensor<T> xhat({r, c});
  Tensor<T> out({r, c});
  const T* gm = gamma.value().raw();
  const T* bt = beta.value().raw();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const T h = (xv[i * c + j] - mean[j]) * inv_std[j];
      xhat[i * c + j] = h;
      out[i * c + j] = gm[j] * h + bt[j];
    }

  const bool train = mode == Mode::kTrain;
  return detail::make_result<T>(
      std::move(out), {x, gamma, beta},
      [r, c, train, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](Node<T>& self) {
        const T* g = self.grad.raw();
        const T* gm = self.parents[1]->value.raw();
        T* gx = detail::parent_grad(self, 0);
        T* ggamma = detail::parent_grad(self, 1);
        T* gbeta = detail::parent_grad(self, 2);
        std::vector<T> sum_g(c, T(0)), sum_gh(c, T(0));
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            sum_g[j] += g[i * c + j];
            sum_gh[j] += g[i * c + j] * xhat[i * c + j];
          }
        if (ggamma)
          for (std::size_t j = 0; j < c; ++j) ggamma[j] += sum_gh[j];
        if (gbeta)
          for (std::size_t j = 0; j < c; ++j) gbeta[j] += sum_g[j];
        if (!gx) return;
        if (!train) {
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              gx[i * c + j] += g[i * c + j] * gm[j] * inv_std[j];
          return;
        }
        const T inv_r = T(1) / T(r);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const std::size_t idx = i * c + j;
            gx[idx] += gm[j] * inv_std[j] *
                       (g[idx] - inv_r * sum_g[j] -
                        xhat[idx] * inv_r * sum_gh[j]);
          }
      });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/**
 * Mean over rows of -log softmax(logits)[label], stabilized by subtracting
 * each row's maximum.
 */
template <typename T>
Var<T> softmax_cross_entropy(const Var<T>& logits,
                             const std::vector<std::size_t>& labels) {
  const auto& lv = logits.value();
  detail::require(lv.rank() == 2 && labels.size() == lv.rows(),
                  "softmax_cross_entropy expects one label per row of " +
                      shape_string(lv.shape()));
  const std::size_t r = lv.rows(), c = lv.cols();
  Tensor<T> probs({r, c});
  T total = T(0);
  for (std::size_t i = 0; i < r; ++i) {
    if (labels[i] >= c) {
      throw InvalidArgument("label " + std::to_string(labels[i]) +
                            " out of range for " + std::to_string(c) +
                            " classes");
    }
    const T* z = lv.raw() + i * c;
    const T mx = *std::max_element(z, z + c);
    T denom = T(0);
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(z[j] - mx);
      denom += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= denom;
    total += mx + std::log(denom) - z[labels[i]];
  }
  return detail::make_result<T>(
      Tensor<T>({1}, total / T(r)), {logits},
      [r, c, labels, probs = std::move(probs)](Node<T>& self) {
        T* gl = detail::parent_grad(self, 0);
        if (!gl) return;
        const T g = self.grad[0] / T(r);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j)
            gl[i * c + j] +=
                g * (probs[i * c + j] - (j == labels[i] ? T(1) : T(0)));
      });
}

}  // namespace fatnet
