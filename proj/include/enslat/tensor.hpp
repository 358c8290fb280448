#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace enslat {

// Dense row-major tensor of 64-bit floats. Rank 0 (scalar) through rank 4
// are used in this project. Shapes are immutable after construction; data
// is value-semantic.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double v);

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }

  // Rank-2 accessors.
  std::int64_t rows() const;
  std::int64_t cols() const;
  double& at2(std::int64_t i, std::int64_t j) { return data_[static_cast<std::size_t>(i * cols_ + j)]; }
  double at2(std::int64_t i, std::int64_t j) const { return data_[static_cast<std::size_t>(i * cols_ + j)]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Value of a single-element tensor.
  double item() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  bool empty() const { return data_.empty() && shape_.empty(); }
  std::string shape_str() const;

  // Returns a copy of row i of a rank-2 tensor as a rank-1 tensor.
  Tensor row(std::int64_t i) const;

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
  std::int64_t cols_ = 0;  // cached for rank >= 1 (last dimension)
};

// Exact (correctly rounded) sum of doubles via Shewchuk partials, as in
// math.fsum. The result is independent of input order, which is what makes
// member-permutation invariance bit-exact throughout this project.
double exact_sum(std::span<const double> xs);
double exact_mean(std::span<const double> xs);

}  // namespace enslat
