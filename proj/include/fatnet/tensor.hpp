#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "fatnet/error.hpp"

namespace fatnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/**
 * Dense row-major tensor with an immutable shape.
 *
 * Every dimension is positive and the element count always equals the
 * product of the shape. A default-constructed tensor is the only empty one.
 */
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_size(shape_)) {
      throw DimensionError("tensor data has " + std::to_string(data_.size()) +
                           " elements but shape " + shape_string(shape_) +
                           " needs " + std::to_string(shape_size(shape_)));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }

  /// Square identity of size n.
  static Tensor eye(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw DimensionError("axis " + std::to_string(axis) +
                           " out of range for shape " + shape_string(shape_));
    }
    return shape_[axis];
  }

  /// Rows/cols of a rank-2 tensor.
  std::size_t rows() const { return require_rank(2).shape_[0]; }
  std::size_t cols() const { return require_rank(2).shape_[1]; }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  std::span<T> row(std::size_t r) {
    const std::size_t c = cols();
    return std::span<T>(data_).subspan(r * c, c);
  }
  std::span<const T> row(std::size_t r) const {
    const std::size_t c = cols();
    return std::span<const T>(data_).subspan(r * c, c);
  }

  /// Same data under a new shape of equal element count.
  Tensor reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    for (std::size_t d : shape_) {
      if (d == 0) {
        throw DimensionError("zero-sized dimension in shape " +
                             shape_string(shape_));
      }
    }
  }

  const Tensor& require_rank(std::size_t r) const {
    if (shape_.size() != r) {
      throw DimensionError("expected rank " + std::to_string(r) +
                           " tensor, got shape " + shape_string(shape_));
    }
    return *this;
  }

  Shape shape_;
  std::vector<T> data_;
};

namespace detail {

/**
 * C[m x q] += A[m x p] * B[p x q], all row-major.
 *
 * Each output element accumulates over p in ascending order, so a row of C
 * depends only on the matching row of A. Row permutations of A therefore
 * permute C bit-for-bit.
 */
template <typename T>
void gemm_acc(const T* a, const T* b, T* c, std::size_t m, std::size_t p,
              std::size_t q) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * q;
    const T* arow = a + i * p;
    for (std::size_t k = 0; k < p; ++k) {
      const T s = arow[k];
      const T* __restrict brow = b + k * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += s * brow[j];
    }
  }
}

/// Out-of-place transpose of a rows x cols matrix.
template <typename T>
std::vector<T> transpose(const T* a, std::size_t rows, std::size_t cols) {
  std::vector<T> t(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) t[j * rows + i] = a[i * cols + j];
  return t;
}

/**
 * Sum that does not depend on the order of its inputs: values are sorted
 * and then reduced by a fixed pairwise tree.
 */
template <typename T>
T order_free_sum(std::vector<T>& values) {
  if (values.empty()) return T(0);
  std::sort(values.begin(), values.end());
  std::size_t n = values.size();
  while (n > 1) {
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < half; ++i)
      values[i] = values[2 * i] + values[2 * i + 1];
    if (n % 2) values[half] = values[n - 1];
    n = half + n % 2;
  }
  return values[0];
}

}  // namespace detail

}  // namespace fatnet
