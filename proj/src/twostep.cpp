#include "enslat/twostep.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "enslat/linalg.hpp"

namespace enslat::twostep {

Projector Projector::from_pca(pca::PcaModel model) {
  Projector p;
  p.impl_ = std::move(model);
  return p;
}

Projector Projector::from_ae(ae::AeModel model) {
  Projector p;
  p.impl_ = std::move(model);
  return p;
}

Tensor Projector::encode(const Tensor& rows) const {
  if (const auto* p = std::get_if<pca::PcaModel>(&impl_)) return pca::transform(*p, rows);
  return std::get<ae::AeModel>(impl_).encode(rows);
}

Tensor Projector::decode(const Tensor& codes) const {
  if (const auto* p = std::get_if<pca::PcaModel>(&impl_)) return pca::inverse_transform(*p, codes);
  return std::get<ae::AeModel>(impl_).decode(codes);
}

std::int64_t Projector::d_data() const {
  if (const auto* p = std::get_if<pca::PcaModel>(&impl_)) return p->d_data();
  return std::get<ae::AeModel>(impl_).cfg.d_data;
}

std::int64_t Projector::d_latent() const {
  if (const auto* p = std::get_if<pca::PcaModel>(&impl_)) return p->d_latent();
  return std::get<ae::AeModel>(impl_).cfg.d_latent;
}

const char* Projector::kind() const {
  return std::holds_alternative<pca::PcaModel>(impl_) ? "pca" : "ae";
}

const pca::PcaModel* Projector::as_pca() const { return std::get_if<pca::PcaModel>(&impl_); }
const ae::AeModel* Projector::as_ae() const { return std::get_if<ae::AeModel>(&impl_); }

Tensor encode_members(const Projector& proj, const Tensor& ensemble) {
  if (ensemble.rank() != 2 || ensemble.cols() != proj.d_data()) {
    throw std::invalid_argument("encode_members: expected {M, d_data} ensemble");
  }
  return proj.encode(ensemble);
}

LatentGaussian fit_latent_gaussian(const Tensor& codes) {
  if (codes.rank() != 2) throw std::invalid_argument("fit_latent_gaussian: expected {M, d} codes");
  const std::int64_t m = codes.rows(), d = codes.cols();
  if (m < 2) throw std::invalid_argument("fit_latent_gaussian: need at least 2 members");

  LatentGaussian out;
  out.mean = Tensor::zeros({d});
  std::vector<double> buf(static_cast<std::size_t>(m));
  for (std::int64_t j = 0; j < d; ++j) {
    for (std::int64_t i = 0; i < m; ++i) buf[static_cast<std::size_t>(i)] = codes.at2(i, j);
    out.mean[j] = exact_mean(buf);
  }

  out.covariance = Tensor::zeros({d, d});
  const double denom = static_cast<double>(m - 1);
  for (std::int64_t j = 0; j < d; ++j) {
    for (std::int64_t k = j; k < d; ++k) {
      for (std::int64_t i = 0; i < m; ++i) {
        buf[static_cast<std::size_t>(i)] =
            (codes.at2(i, j) - out.mean[j]) * (codes.at2(i, k) - out.mean[k]);
      }
      const double cov = exact_sum(buf) / denom;
      out.covariance.at2(j, k) = cov;
      out.covariance.at2(k, j) = cov;
    }
  }
  return out;
}

Tensor sample_latent(const LatentGaussian& dist, std::int64_t n, Rng& rng) {
  const std::int64_t d = dist.d_latent();
  if (dist.covariance.rank() != 2 || dist.covariance.rows() != d || dist.covariance.cols() != d) {
    throw std::invalid_argument("sample_latent: covariance shape mismatch");
  }
  double trace = 0.0;
  for (std::int64_t j = 0; j < d; ++j) trace += dist.covariance.at2(j, j);
  double jitter = std::max(1e-6 * trace / static_cast<double>(d), 1e-10);

  Tensor chol;
  bool done = false;
  for (int attempt = 0; attempt < 4 && !done; ++attempt, jitter *= 10.0) {
    Tensor shifted = dist.covariance;
    for (std::int64_t j = 0; j < d; ++j) shifted.at2(j, j) += jitter;
    try {
      chol = cholesky(shifted);
      done = true;
    } catch (const NotPositiveDefinite&) {
      if (attempt == 3) throw;
    }
  }

  Tensor eps = Tensor::zeros({n, d});
  for (double& x : eps.values()) x = rng.normal();
  Tensor out = matmul_nt(eps, chol);  // rows: (L * eps_i)^T = eps_i^T * L^T
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) out.at2(i, j) += dist.mean[j];
  }
  return out;
}

Tensor reconstruct(const Projector& proj, const LatentGaussian& dist, std::int64_t n, Rng& rng) {
  if (dist.d_latent() != proj.d_latent()) {
    throw std::invalid_argument("reconstruct: latent dimension mismatch");
  }
  return proj.decode(sample_latent(dist, n, rng));
}

std::string latent_gaussian_to_json(const LatentGaussian& dist) {
  nlohmann::json j;
  j["d"] = dist.d_latent();
  j["mean"] = std::vector<double>(dist.mean.values().begin(), dist.mean.values().end());
  j["covariance"] =
      std::vector<double>(dist.covariance.values().begin(), dist.covariance.values().end());
  return j.dump(2) + "\n";
}

LatentGaussian latent_gaussian_from_json(const std::string& text) {
  const nlohmann::json j = nlohmann::json::parse(text);
  const std::int64_t d = j.at("d").get<std::int64_t>();
  auto mean = j.at("mean").get<std::vector<double>>();
  auto cov = j.at("covariance").get<std::vector<double>>();
  if (static_cast<std::int64_t>(mean.size()) != d ||
      static_cast<std::int64_t>(cov.size()) != d * d) {
    throw std::invalid_argument("latent_gaussian_from_json: size mismatch");
  }
  LatentGaussian out;
  out.mean = Tensor({d}, std::move(mean));
  out.covariance = Tensor({d, d}, std::move(cov));
  return out;
}

}  // namespace enslat::twostep
