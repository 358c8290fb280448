#pragma once

#include <cstdint>
#include <variant>

#include "enslat/dense_ae.hpp"
#include "enslat/pca.hpp"
#include "enslat/rng.hpp"
#include "enslat/tensor.hpp"

namespace enslat::twostep {

// Gaussian fitted to per-member latent codes: full covariance for the
// two-step methods, diagonal when built from an iVAE posterior.
struct LatentGaussian {
  Tensor mean;        // {d}
  Tensor covariance;  // {d, d} symmetric PSD
  std::int64_t d_latent() const { return mean.dim(0); }
};

// Deterministic encode/decode pair backing the two-step framework.
class Projector {
 public:
  static Projector from_pca(pca::PcaModel model);
  static Projector from_ae(ae::AeModel model);

  Tensor encode(const Tensor& rows) const;
  Tensor decode(const Tensor& codes) const;
  std::int64_t d_data() const;
  std::int64_t d_latent() const;
  const char* kind() const;  // "pca" or "ae"

  const pca::PcaModel* as_pca() const;
  const ae::AeModel* as_ae() const;

 private:
  std::variant<pca::PcaModel, ae::AeModel> impl_;
};

// Per-member encoding; row order follows the input.
Tensor encode_members(const Projector& proj, const Tensor& ensemble);

// Member mean and unbiased (M-1) sample covariance, both computed with
// exact summation so the fit is bit-invariant to member order.
LatentGaussian fit_latent_gaussian(const Tensor& codes);

// mu + L*eps with L = cholesky(Sigma + jitter*I); jitter starts at
// 1e-6 * trace(Sigma)/d (floor 1e-10) and escalates x10 up to 3 retries.
Tensor sample_latent(const LatentGaussian& dist, std::int64_t n, Rng& rng);

// JSON round trip: {"mean": [...], "covariance": row-major [...], "d": n}.
std::string latent_gaussian_to_json(const LatentGaussian& dist);
LatentGaussian latent_gaussian_from_json(const std::string& text);

// Decode n latent samples into reconstructed fields.
Tensor reconstruct(const Projector& proj, const LatentGaussian& dist, std::int64_t n, Rng& rng);

}  // namespace enslat::twostep
