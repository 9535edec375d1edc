// Dense row-major tensor container used throughout the library.
//
// Rasters are indexed (row, col) or (row, col, channel); weights use up to
// four indices. The container is deliberately minimal: hot paths operate on
// the flat data() span, with Eigen maps where matrix products are involved.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "textdepth/common.hpp"

namespace textdepth {

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), T{}) {}

  Tensor(std::vector<int64_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != checked_numel(shape_))
      throw ShapeError("tensor data size does not match shape");
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int64_t> shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
  }

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  const T& operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  T& at(int64_t i, int64_t j) { return data_[static_cast<size_t>(i * shape_[1] + j)]; }
  const T& at(int64_t i, int64_t j) const {
    return data_[static_cast<size_t>(i * shape_[1] + j)];
  }

  T& at(int64_t i, int64_t j, int64_t k) {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }
  const T& at(int64_t i, int64_t j, int64_t k) const {
    return data_[static_cast<size_t>((i * shape_[1] + j) * shape_[2] + k)];
  }

  T& at(int64_t i, int64_t j, int64_t k, int64_t l) {
    return data_[static_cast<size_t>(
        ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }
  const T& at(int64_t i, int64_t j, int64_t k, int64_t l) const {
    return data_[static_cast<size_t>(
        ((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  double frobenius_norm() const {
    double s = 0.0;
    for (const T& v : data_) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (const T& v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static int64_t checked_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
      if (d < 0) throw ShapeError("negative tensor dimension");
      n *= d;
    }
    return n;
  }

  std::vector<int64_t> shape_;
  std::vector<T> data_;
};

inline std::string shape_to_string(const std::vector<int64_t>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " +
                     shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
}

}  // namespace textdepth
