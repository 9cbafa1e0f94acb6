// SPDX-License-Identifier: Apache-2.0
#include "ubt/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "ubt/errors.hpp"

namespace ubt {

namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (const std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw ShapeMismatchError("tensor data length " +
                             std::to_string(data_.size()) +
                             " does not match shape " + shape_string());
  }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return Tensor(std::move(shape));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  Tensor t(std::move(shape));
  for (double& v : t.data_) v = value;
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (rank() != 2) {
    throw ShapeMismatchError("rows() requires rank-2 tensor, got " +
                             shape_string());
  }
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) {
    throw ShapeMismatchError("cols() requires rank-2 tensor, got " +
                             shape_string());
  }
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return data_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return data_[r * cols() + c];
}

bool Tensor::all_finite() const {
  for (const double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::require_finite(const std::string& what) const {
  if (!all_finite()) {
    throw NonFiniteError("non-finite value in " + what);
  }
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

Tensor l2_normalize(const Tensor& v, std::size_t axis) {
  if (v.rank() == 1) {
    if (axis != 0) {
      throw ShapeMismatchError("l2_normalize: axis out of range for rank-1");
    }
    double sq = 0.0;
    for (const double x : v.values()) sq += x * x;
    const double norm = std::sqrt(sq);
    if (norm <= kNormFloor) {
      throw ZeroNormError("l2_normalize: slice norm below floor");
    }
    Tensor out(v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / norm;
    return out;
  }
  if (v.rank() == 2 && axis == 1) {
    Tensor out(v.shape());
    const std::size_t n = v.rows(), d = v.cols();
    for (std::size_t r = 0; r < n; ++r) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) sq += v.at(r, c) * v.at(r, c);
      const double norm = std::sqrt(sq);
      if (norm <= kNormFloor) {
        throw ZeroNormError("l2_normalize: row " + std::to_string(r) +
                            " norm below floor");
      }
      for (std::size_t c = 0; c < d; ++c) out.at(r, c) = v.at(r, c) / norm;
    }
    return out;
  }
  throw ShapeMismatchError("l2_normalize: unsupported rank/axis combination");
}

double cosine_similarity(const Tensor& u, const Tensor& v) {
  if (u.size() != v.size() || u.empty()) {
    throw ShapeMismatchError("cosine_similarity: length mismatch");
  }
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uu += u[i] * u[i];
    vv += v[i] * v[i];
    uv += u[i] * v[i];
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu <= kNormFloor || nv <= kNormFloor) {
    throw ZeroNormError("cosine_similarity: zero-norm input");
  }
  const double s = uv / (nu * nv);
  return s > 1.0 ? 1.0 : (s < -1.0 ? -1.0 : s);
}

}  // namespace ubt
