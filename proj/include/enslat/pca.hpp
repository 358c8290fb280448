#pragma once

#include <cstdint>

#include "enslat/tensor.hpp"

namespace enslat::pca {

struct PcaModel {
  Tensor feature_mean;     // {d_data}
  Tensor components;       // {d_latent, d_data}, rows orthonormal
  Tensor singular_values;  // {d_latent}, non-increasing
  double total_variance = 0.0;  // sum of all squared singular values

  std::int64_t d_data() const { return feature_mean.dim(0); }
  std::int64_t d_latent() const { return components.dim(0); }
};

// Fits the top right-singular vectors of the centered sample matrix
// {n, d_data}; every row is an independent sample. Requires n > 1 and
// d_latent <= min(n - 1, d_data).
PcaModel fit(const Tensor& samples, std::int64_t d_latent);

// components * (x - mean) per row; accepts {n, d_data} or a single {d_data}.
Tensor transform(const PcaModel& model, const Tensor& fields);

// components^T * code + mean per row.
Tensor inverse_transform(const PcaModel& model, const Tensor& codes);

// Fraction of total variance captured by the first k components.
double explained_variance_ratio(const PcaModel& model, std::int64_t k);

}  // namespace enslat::pca
