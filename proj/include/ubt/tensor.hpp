// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace ubt {

// Dense row-major tensor of doubles. Values are plain data: tensors are
// cheap to copy at the scales used here and are treated as immutable once
// handed to another component.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // 2-D convenience accessors; rows()/cols() require rank 2.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  // Throws NonFiniteError naming `what` if any value is NaN/Inf.
  void require_finite(const std::string& what) const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

  std::string shape_string() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Normalizes slices along `axis` to unit L2 norm. Supports rank-1 (axis 0)
// and rank-2 (axis 1: each row). Throws ZeroNormError if any slice norm is
// <= 1e-12.
Tensor l2_normalize(const Tensor& v, std::size_t axis = 0);

// Cosine of the angle between u and v, clamped to [-1, 1]. Inputs must have
// equal length and nonzero norm.
double cosine_similarity(const Tensor& u, const Tensor& v);

inline constexpr double kNormFloor = 1e-12;

}  // namespace ubt
