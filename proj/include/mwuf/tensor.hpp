#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "mwuf/errors.hpp"

namespace mwuf {

// Dense row-major tensor. Rank 1 and 2 cover every operation in this library;
// the shape is kept as a vector so callers can reshape freely.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), v_(count(shape_), fill) {}

  static Tensor from(std::vector<size_t> shape, std::vector<T> values) {
    if (count(shape) != values.size())
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values do not fill shape of " + std::to_string(count(shape)));
    Tensor t;
    t.shape_ = std::move(shape);
    t.v_ = std::move(values);
    return t;
  }

  static Tensor row_vector(std::vector<T> values) {
    std::vector<size_t> shape = {values.size()};
    return from(std::move(shape), std::move(values));
  }

  size_t rank() const { return shape_.size(); }
  size_t size() const { return v_.size(); }
  const std::vector<size_t>& shape() const { return shape_; }

  // Rank-2 accessors; a rank-1 tensor behaves as a single row.
  size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 0 ? 0 : 1); }
  size_t cols() const { return rank() == 2 ? shape_[1] : size(); }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  std::vector<T>& values() { return v_; }
  const std::vector<T>& values() const { return v_; }

  T& operator[](size_t i) { return v_[i]; }
  const T& operator[](size_t i) const { return v_[i]; }
  T& at(size_t i, size_t j) { return v_[i * cols() + j]; }
  const T& at(size_t i, size_t j) const { return v_[i * cols() + j]; }

  std::span<T> row(size_t i) { return {v_.data() + i * cols(), cols()}; }
  std::span<const T> row(size_t i) const { return {v_.data() + i * cols(), cols()}; }

  void fill(T x) { std::fill(v_.begin(), v_.end(), x); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  Tensor reshaped(std::vector<size_t> shape) const {
    return from(std::move(shape), v_);
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && v_ == o.v_; }

 private:
  static size_t count(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) {
      if (d == 0) throw DimensionError("tensor: zero extent");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

  std::vector<size_t> shape_;
  std::vector<T> v_;
};

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T x : t.values())
    if (!std::isfinite(x)) return false;
  return true;
}

inline std::string shape_str(const std::vector<size_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace mwuf
