#include "enslat/synthgen.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "enslat/linalg.hpp"

namespace enslat::synth {

namespace {

constexpr std::uint64_t kStreamMode = 1;
constexpr std::uint64_t kStreamDay = 2;
constexpr std::uint64_t kStreamMember = 3;

Tensor kernel_cholesky(const GrfConfig& cfg) {
  const std::int64_t cells = cfg.height * cfg.width;
  Tensor k = Tensor::zeros({cells, cells});
  const double inv = 1.0 / (2.0 * cfg.length_scale * cfg.length_scale);
  for (std::int64_t p = 0; p < cells; ++p) {
    const double pr = static_cast<double>(p / cfg.width);
    const double pc = static_cast<double>(p % cfg.width);
    for (std::int64_t q = 0; q < cells; ++q) {
      const double qr = static_cast<double>(q / cfg.width);
      const double qc = static_cast<double>(q % cfg.width);
      const double d2 = (pr - qr) * (pr - qr) + (pc - qc) * (pc - qc);
      k.at2(p, q) = std::exp(-d2 * inv);
    }
    k.at2(p, p) += 1e-8;  // fixed jitter; failure past this is an error
  }
  return cholesky(k);
}

// One zero-mean GRF draw, field = L * eps.
Tensor grf_draw(const Tensor& l, Rng& stream) {
  const std::int64_t cells = l.rows();
  Tensor eps = Tensor::zeros({cells});
  for (std::int64_t i = 0; i < cells; ++i) eps[i] = stream.normal();
  return matmul(l, eps);
}

}  // namespace

fields::EnsembleDataset generate(const GrfConfig& cfg) {
  if (cfg.height < 1 || cfg.width < 1 || cfg.n_days < 1 || cfg.n_members < 2) {
    throw std::invalid_argument("synth::generate: need positive grid, T >= 1, M >= 2");
  }
  if (cfg.height * cfg.width > 4096) {
    throw std::invalid_argument("synth::generate: grid larger than 4096 cells");
  }
  if (cfg.length_scale <= 0.0 || cfg.day_signal_std < 0.0 || cfg.member_noise_std < 0.0) {
    throw std::invalid_argument("synth::generate: invalid kernel parameters");
  }

  const Tensor l = kernel_cholesky(cfg);
  const std::int64_t cells = cfg.height * cfg.width;
  const Rng root(cfg.seed);

  // Fixed spatial mode, normalized to unit RMS so seasonal_amplitude is in
  // field units.
  Rng mode_stream = root.fork(kStreamMode);
  Tensor mode = grf_draw(l, mode_stream);
  double ms = 0.0;
  for (double x : mode.values()) ms += x * x;
  ms = std::sqrt(ms / static_cast<double>(cells));
  if (ms > 0.0) {
    for (double& x : mode.values()) x /= ms;
  }

  fields::EnsembleDataset ds;
  ds.n_days = cfg.n_days;
  ds.n_members = cfg.n_members;
  ds.height = cfg.height;
  ds.width = cfg.width;
  ds.variable_name = "synthetic";
  ds.values = Tensor::zeros({cfg.n_days, cfg.n_members, cfg.height, cfg.width});
  ds.day_labels.reserve(static_cast<std::size_t>(cfg.n_days));
  for (std::int64_t t = 0; t < cfg.n_days; ++t) ds.day_labels.push_back(std::to_string(t));

  const double two_pi = 2.0 * std::numbers::pi;
  for (std::int64_t t = 0; t < cfg.n_days; ++t) {
    const double season = cfg.seasonal_amplitude *
                          std::sin(two_pi * static_cast<double>(t) / static_cast<double>(cfg.n_days));
    Rng day_stream = root.fork(kStreamDay, static_cast<std::uint64_t>(t));
    Tensor day_noise = grf_draw(l, day_stream);

    Tensor base = Tensor::zeros({cells});
    for (std::int64_t i = 0; i < cells; ++i) {
      base[i] = season * mode[i] + cfg.day_signal_std * day_noise[i];
    }

    for (std::int64_t m = 0; m < cfg.n_members; ++m) {
      double* field = ds.values.data() + (t * cfg.n_members + m) * cells;
      if (cfg.member_noise_std > 0.0) {
        Rng mem_stream = root.fork(
            kStreamMember, static_cast<std::uint64_t>(t * cfg.n_members + m));
        Tensor mem_noise = grf_draw(l, mem_stream);
        for (std::int64_t i = 0; i < cells; ++i) {
          field[i] = base[i] + cfg.member_noise_std * mem_noise[i];
        }
      } else {
        for (std::int64_t i = 0; i < cells; ++i) field[i] = base[i];
      }
    }
  }
  return ds;
}

}  // namespace enslat::synth
