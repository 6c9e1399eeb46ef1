// Dense row-major tensors of 64-bit floats, rank 1 or 2. Small by design:
// just shape + storage, with the checks every op needs.
#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fcgan/errors.hpp"

namespace fcgan {

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        v_(std::accumulate(shape_.begin(), shape_.end(), std::size_t{1},
                           std::multiplies<>()),
           fill) {
    if (shape_.empty() || shape_.size() > 2)
      throw DimensionError("tensor rank must be 1 or 2, got rank " +
                           std::to_string(shape_.size()));
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), v_(std::move(values)) {
    if (shape_.empty() || shape_.size() > 2)
      throw DimensionError("tensor rank must be 1 or 2, got rank " +
                           std::to_string(shape_.size()));
    const std::size_t expect = std::accumulate(
        shape_.begin(), shape_.end(), std::size_t{1}, std::multiplies<>());
    if (expect != v_.size())
      throw DimensionError("tensor shape " + shape_str_of(shape_) +
                           " does not hold " + std::to_string(v_.size()) +
                           " values");
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::size_t n, double fill = 0.0) {
    return Tensor({n}, fill);
  }
  static Tensor scalar(double v) { return Tensor({std::size_t{1}}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return v_.size(); }
  bool empty() const { return v_.empty(); }
  bool is_scalar() const { return v_.size() == 1; }

  std::size_t rows() const { return ndim() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return ndim() == 2 ? shape_[1] : shape_[0]; }

  double& operator[](std::size_t i) { return v_[i]; }
  double operator[](std::size_t i) const { return v_[i]; }
  double& at(std::size_t r, std::size_t c) { return v_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return v_[r * cols() + c]; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }
  std::vector<double>& values() { return v_; }
  const std::vector<double>& values() const { return v_; }

  double scalar_value() const {
    if (!is_scalar())
      throw DimensionError("expected scalar, got shape " + shape_str());
    return v_[0];
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double x : v_)
      if (!std::isfinite(x)) return false;
    return true;
  }

  std::string shape_str() const { return shape_str_of(shape_); }

  static std::string shape_str_of(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) os << 'x';
      os << s[i];
    }
    os << ']';
    return os.str();
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> v_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b,
                               const char* ctx) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(ctx) + ": shape mismatch " +
                         a.shape_str() + " vs " + b.shape_str());
}

}  // namespace fcgan
