#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "defo/errors.hpp"

namespace defo {

using shape_t = std::vector<std::size_t>;

inline std::string shape_str(const shape_t& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const shape_t& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array. `grad` is empty until a backward pass deposits into it.
template <class T>
class basic_tensor {
 public:
  using value_type = T;

  basic_tensor() = default;

  explicit basic_tensor(shape_t shape, T fill = T{0})
      : shape_(std::move(shape)), values_(shape_size(shape_), fill) {
    check_shape();
  }

  basic_tensor(shape_t shape, std::vector<T> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    check_shape();
    if (values_.size() != shape_size(shape_)) {
      throw dimension_error("tensor: " + std::to_string(values_.size()) +
                            " values do not fill shape " + shape_str(shape_));
    }
  }

  static basic_tensor zeros(shape_t shape) { return basic_tensor(std::move(shape)); }

  static basic_tensor identity(std::size_t n) {
    basic_tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = T{1};
    return t;
  }

  static basic_tensor vector(std::vector<T> values) {
    const std::size_t n = values.size();
    return basic_tensor({n}, std::move(values));
  }

  const shape_t& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  bool empty() const noexcept { return values_.empty(); }

  /// Rows/cols under the matrix view: rank-1 tensors are a single row.
  std::size_t rows() const noexcept {
    if (shape_.empty()) return 0;
    return shape_.size() == 1 ? 1 : values_.size() / shape_.back();
  }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::span<T> values() noexcept { return values_; }
  std::span<const T> values() const noexcept { return values_; }
  std::vector<T>& storage() noexcept { return values_; }
  const std::vector<T>& storage() const noexcept { return values_; }

  T& operator[](std::size_t i) noexcept { return values_[i]; }
  const T& operator[](std::size_t i) const noexcept { return values_[i]; }
  T& at(std::size_t r, std::size_t c) noexcept { return values_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return values_[r * cols() + c]; }

  std::span<T> row(std::size_t r) noexcept { return {values_.data() + r * cols(), cols()}; }
  std::span<const T> row(std::size_t r) const noexcept {
    return {values_.data() + r * cols(), cols()};
  }

  void reshape(shape_t shape) {
    if (shape_size(shape) != values_.size()) {
      throw dimension_error("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    shape_ = std::move(shape);
    if (!grad.empty() && grad.size() != values_.size()) grad.clear();
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T{0}); }
  bool has_grad() const noexcept { return !grad.empty(); }

  bool all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
  }

  /// Value equality (shape + every element); grads are ignored.
  friend bool operator==(const basic_tensor& a, const basic_tensor& b) {
    return a.shape_ == b.shape_ && a.values_ == b.values_;
  }

  bool requires_grad = false;
  std::vector<T> grad;

 private:
  void check_shape() const {
    for (auto d : shape_) {
      if (d == 0) throw dimension_error("tensor: zero-sized dimension in " + shape_str(shape_));
    }
  }

  shape_t shape_;
  std::vector<T> values_;
};

using Tensor = basic_tensor<double>;
using TensorF = basic_tensor<float>;

/// Largest elementwise |a − b| over two equal-length ranges.
template <class A, class B>
double max_abs_diff(const A& a, const B& b) {
  if (std::size(a) != std::size(b)) throw dimension_error("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < std::size(a); ++i) {
    m = std::max(m, static_cast<double>(std::abs(a[i] - b[i])));
  }
  return m;
}

/// Lowest index wins on ties.
template <class R>
std::size_t argmax(const R& v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < std::size(v); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace defo
