#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "cervifuse/common/error.hpp"

namespace cervifuse::nn {

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>, "Tensor supports float and double");
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

std::string shape_string(std::span<const std::size_t> shape);

/// Dense row-major n-dimensional array.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0)) : shape_(std::move(shape)), data_(count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                           shape_string(shape_));
    }
  }

  /// 2-D tensor from nested row literals.
  static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor vector(std::initializer_list<T> values) { return Tensor({values.size()}, std::vector<T>(values)); }

  static constexpr DType dtype() { return dtype_of<T>(); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const {
    if (i >= shape_.size()) throw DimensionError("axis " + std::to_string(i) + " out of range for " + shape_string(shape_));
    return shape_[i];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  const std::vector<T>& values() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  std::span<T> row(std::size_t r) { return {data_.data() + r * shape_[1], shape_[1]}; }
  std::span<const T> row(std::size_t r) const { return {data_.data() + r * shape_[1], shape_[1]}; }

  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  /// NaN/Inf is an error state for every op.
  void require_finite(const std::string& what) const {
    if (!all_finite()) throw StateError(what + ": tensor contains NaN or Inf");
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  bool operator==(const Tensor&) const = default;

 private:
  static std::size_t count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

/// Throws DimensionError unless `t` is rank 2.
template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.rank() != 2) throw DimensionError(std::string(what) + ": expected a 2-D tensor, got " + shape_string(t.shape()));
}

/// C = A·B for 2-D tensors. Fixed i-k-j loop order so results are
/// reproducible bit for bit.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) throw DimensionError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  Tensor<T> c({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    T* ci = c.data().data() + i * m;
    const T* ai = a.data().data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = ai[p];
      if (av == T(0)) continue;
      const T* bp = b.data().data() + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
  return c;
}

/// C = Aᵀ·B.
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_tn lhs");
  require_matrix(b, "matmul_tn rhs");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != n) throw DimensionError("matmul_tn: " + shape_string(a.shape()) + "^T x " + shape_string(b.shape()));
  Tensor<T> c({k, m});
  for (std::size_t r = 0; r < n; ++r) {
    const T* ar = a.data().data() + r * k;
    const T* br = b.data().data() + r * m;
    for (std::size_t i = 0; i < k; ++i) {
      const T av = ar[i];
      if (av == T(0)) continue;
      T* ci = c.data().data() + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += av * br[j];
    }
  }
  return c;
}

/// C = A·Bᵀ.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt lhs");
  require_matrix(b, "matmul_nt rhs");
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  if (b.cols() != k) throw DimensionError("matmul_nt: " + shape_string(a.shape()) + " x " + shape_string(b.shape()) + "^T");
  Tensor<T> c({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    const T* ai = a.data().data() + i * k;
    for (std::size_t j = 0; j < m; ++j) {
      const T* bj = b.data().data() + j * k;
      T acc = T(0);
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c.at(i, j) = acc;
    }
  }
  return c;
}

}  // namespace cervifuse::nn
