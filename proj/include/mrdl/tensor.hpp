// Copyright 2026 The MRDL Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MRDL_TENSOR_HPP_
#define MRDL_TENSOR_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "mrdl/common.hpp"

namespace mrdl {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorCode::kShapeMismatch,
            "matrix data length " + std::to_string(data_.size()) + " != " +
                dims_str(rows_, cols_));
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Batch-major 4-D tensor (batch, channels, height, width).
class Tensor4 {
 public:
  using Dims = std::array<std::size_t, 4>;

  Tensor4() = default;
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : dims_{n, c, h, w}, data_(n * c * h * w, fill) {
    require(n >= 1 && c >= 1 && h >= 1 && w >= 1, ErrorCode::kShapeMismatch,
            "tensor dims must be >= 1, got " + dims_str(n, c, h, w));
  }
  explicit Tensor4(const Dims& d, double fill = 0.0) : Tensor4(d[0], d[1], d[2], d[3], fill) {}

  std::size_t batch() const { return dims_[0]; }
  std::size_t channels() const { return dims_[1]; }
  std::size_t height() const { return dims_[2]; }
  std::size_t width() const { return dims_[3]; }
  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  /// Start of the (n, c) spatial plane.
  double* plane(std::size_t n, std::size_t c) { return data_.data() + index(n, c, 0, 0); }
  const double* plane(std::size_t n, std::size_t c) const { return data_.data() + index(n, c, 0, 0); }

  /// Contiguous view of one sample (all channels).
  std::span<double> sample(std::size_t n) {
    const std::size_t s = dims_[1] * dims_[2] * dims_[3];
    return {data_.data() + n * s, s};
  }
  std::span<const double> sample(std::size_t n) const {
    const std::size_t s = dims_[1] * dims_[2] * dims_[3];
    return {data_.data() + n * s, s};
  }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Dims dims_{0, 0, 0, 0};
  std::vector<double> data_;
};

inline std::string dims_str(const Tensor4& t) {
  return dims_str(t.batch(), t.channels(), t.height(), t.width());
}
inline std::string dims_str(const Matrix& m) { return dims_str(m.rows(), m.cols()); }

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace mrdl

#endif  // MRDL_TENSOR_HPP_
