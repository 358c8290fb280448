#include "enslat/pca.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "enslat/linalg.hpp"

namespace enslat::pca {

PcaModel fit(const Tensor& samples, std::int64_t d_latent) {
  if (samples.rank() != 2) throw std::invalid_argument("pca::fit: expected {n, d} samples");
  const std::int64_t n = samples.rows(), d = samples.cols();
  if (n < 2) throw std::invalid_argument("pca::fit: need at least 2 samples");
  if (d_latent < 1 || d_latent > std::min(n - 1, d)) {
    throw std::invalid_argument("pca::fit: d_latent must be in [1, min(n-1, d_data)]");
  }

  Tensor mean = Tensor::zeros({d});
  {
    std::vector<double> col(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < d; ++j) {
      for (std::int64_t i = 0; i < n; ++i) col[static_cast<std::size_t>(i)] = samples.at2(i, j);
      mean[j] = exact_mean(col);
    }
  }

  Tensor centered = samples;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) centered.at2(i, j) -= mean[j];
  }

  SvdResult dec = svd(centered);

  PcaModel model;
  model.feature_mean = std::move(mean);
  model.components = Tensor::zeros({d_latent, d});
  model.singular_values = Tensor::zeros({d_latent});
  for (std::int64_t k = 0; k < d_latent; ++k) {
    model.singular_values[k] = dec.s[k];
    // Deterministic sign: largest-magnitude entry of each component positive.
    std::int64_t arg = 0;
    for (std::int64_t j = 1; j < d; ++j) {
      if (std::fabs(dec.vt.at2(k, j)) > std::fabs(dec.vt.at2(k, arg))) arg = j;
    }
    const double flip = dec.vt.at2(k, arg) < 0.0 ? -1.0 : 1.0;
    for (std::int64_t j = 0; j < d; ++j) model.components.at2(k, j) = flip * dec.vt.at2(k, j);
  }
  {
    std::vector<double> sq(static_cast<std::size_t>(dec.s.numel()));
    for (std::int64_t i = 0; i < dec.s.numel(); ++i) {
      sq[static_cast<std::size_t>(i)] = dec.s[i] * dec.s[i];
    }
    model.total_variance = exact_sum(sq);
  }
  return model;
}

Tensor transform(const PcaModel& model, const Tensor& fields) {
  const bool single = fields.rank() == 1;
  if ((single ? fields.dim(0) : fields.cols()) != model.d_data()) {
    throw std::invalid_argument("pca::transform: field dimension mismatch");
  }
  Tensor centered = fields;
  if (single) {
    for (std::int64_t j = 0; j < model.d_data(); ++j) centered[j] -= model.feature_mean[j];
    return matmul(model.components, centered);  // {k,d} x {d} -> {k}
  }
  for (std::int64_t i = 0; i < fields.rows(); ++i) {
    for (std::int64_t j = 0; j < model.d_data(); ++j) centered.at2(i, j) -= model.feature_mean[j];
  }
  return matmul_nt(centered, model.components);  // {n,d} x {k,d}^T -> {n,k}
}

Tensor inverse_transform(const PcaModel& model, const Tensor& codes) {
  const bool single = codes.rank() == 1;
  if ((single ? codes.dim(0) : codes.cols()) != model.d_latent()) {
    throw std::invalid_argument("pca::inverse_transform: code dimension mismatch");
  }
  if (single) {
    Tensor out = Tensor::zeros({model.d_data()});
    for (std::int64_t k = 0; k < model.d_latent(); ++k) {
      for (std::int64_t j = 0; j < model.d_data(); ++j) {
        out[j] += codes[k] * model.components.at2(k, j);
      }
    }
    for (std::int64_t j = 0; j < model.d_data(); ++j) out[j] += model.feature_mean[j];
    return out;
  }
  Tensor out = matmul(codes, model.components);  // {n,k} x {k,d} -> {n,d}
  for (std::int64_t i = 0; i < out.rows(); ++i) {
    for (std::int64_t j = 0; j < model.d_data(); ++j) out.at2(i, j) += model.feature_mean[j];
  }
  return out;
}

double explained_variance_ratio(const PcaModel& model, std::int64_t k) {
  if (k < 0 || k > model.d_latent()) {
    throw std::invalid_argument("pca::explained_variance_ratio: k out of range");
  }
  if (model.total_variance <= 0.0) return 1.0;  // degenerate constant data
  std::vector<double> sq(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) {
    sq[static_cast<std::size_t>(i)] = model.singular_values[i] * model.singular_values[i];
  }
  return exact_sum(sq) / model.total_variance;
}

}  // namespace enslat::pca
