#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fsnet/error.hpp"

namespace fsnet {

/// Extent of an N x C x H x W array.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
           std::to_string(w);
  }
};

/// Dense row-major tensor: n outermost, w innermost.
template <typename T = double>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[index(n, c, y, x)];
  }
  const T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[index(n, c, y, x)];
  }

  /// One H x W plane.
  std::span<T> channel(std::size_t n, std::size_t c) {
    return std::span<T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }
  std::span<const T> channel(std::size_t n, std::size_t c) const {
    return std::span<const T>(data_).subspan(index(n, c, 0, 0), shape_.plane());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

/// Row-major rows x cols matrix. Fully-connected weights are stored out x in.
template <typename T = double>
class Matrix {
 public:
  using value_type = T;

  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                       " does not match " + shape_str());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::string shape_str() const { return std::to_string(rows_) + "x" + std::to_string(cols_); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols_, cols_); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols_, cols_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

}  // namespace fsnet
