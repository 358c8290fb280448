#pragma once

#include <cstdint>

#include "enslat/fields.hpp"
#include "enslat/rng.hpp"

namespace enslat::synth {

struct GrfConfig {
  std::int64_t height = 16;
  std::int64_t width = 16;
  double length_scale = 3.0;       // grid units, squared-exponential kernel
  double day_signal_std = 0.6;     // per-day shared GRF amplitude
  double member_noise_std = 0.35;  // per-member independent GRF amplitude
  double seasonal_amplitude = 1.5;
  std::int64_t n_days = 500;
  std::int64_t n_members = 20;
  std::uint64_t seed = 0;
};

// Synthetic ensembles of spatially correlated Gaussian random fields.
// Day t shares  A * sin(2*pi*t/T) * mode + sigma_day * GRF_t  across
// members; each member adds an independent sigma_mem * GRF draw with the
// same kernel, so members are exchangeable by construction. Sub-streams
// are derived per day and per (day, member), making the output independent
// of generation order.
fields::EnsembleDataset generate(const GrfConfig& cfg);

}  // namespace enslat::synth
