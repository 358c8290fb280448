#include "enslat/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <utility>

namespace enslat {

namespace {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(shape_numel(shape_)), 0.0) {
  cols_ = shape_.empty() ? 1 : shape_.back();
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw std::invalid_argument("Tensor: shape/data size mismatch");
  }
  cols_ = shape_.empty() ? 1 : shape_.back();
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::int64_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

std::int64_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("Tensor::rows: rank != 2 (" + shape_str() + ")");
  return shape_[0];
}

std::int64_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("Tensor::cols: rank != 2 (" + shape_str() + ")");
  return shape_[1];
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("Tensor::item: numel != 1 (" + shape_str() + ")");
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

Tensor Tensor::row(std::int64_t i) const {
  const std::int64_t n = cols();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t j = 0; j < n; ++j) out[static_cast<std::size_t>(j)] = at2(i, j);
  return Tensor({n}, std::move(out));
}

double exact_sum(std::span<const double> xs) {
  // Shewchuk's algorithm with the final correct-rounding step from math.fsum.
  // Partials are kept non-overlapping and in increasing magnitude.
  thread_local std::vector<double> partials;
  partials.clear();
  for (double x : xs) {
    std::size_t i = 0;
    for (std::size_t j = 0; j < partials.size(); ++j) {
      double y = partials[j];
      if (std::fabs(x) < std::fabs(y)) std::swap(x, y);
      const double hi = x + y;
      const double lo = y - (hi - x);
      if (lo != 0.0) partials[i++] = lo;
      x = hi;
    }
    partials.resize(i);
    partials.push_back(x);
  }

  double hi = 0.0;
  std::size_t n = partials.size();
  if (n > 0) {
    double lo = 0.0;
    hi = partials[--n];
    while (n > 0) {
      const double x = hi;
      const double y = partials[--n];
      hi = x + y;
      const double yr = hi - x;
      lo = y - yr;
      if (lo != 0.0) break;
    }
    // Round-half-even correction when the remainder sits exactly on a tie.
    if (n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0))) {
      const double y = lo * 2.0;
      const double x = hi + y;
      if (y == x - hi) hi = x;
    }
  }
  return hi;
}

double exact_mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("exact_mean: empty input");
  // The mean of identical values is that value; the sum-then-divide route
  // would round twice and can land one ulp off.
  bool all_equal = true;
  for (double x : xs) {
    if (x != xs[0]) {
      all_equal = false;
      break;
    }
  }
  if (all_equal) return xs[0];
  return exact_sum(xs) / static_cast<double>(xs.size());
}

}  // namespace enslat
