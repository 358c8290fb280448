#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "enslat/synthgen.hpp"
#include "oracles.hpp"

using namespace enslat;
using namespace enslat::synth;

namespace {

GrfConfig small_config() {
  GrfConfig cfg;
  cfg.height = 6;
  cfg.width = 6;
  cfg.length_scale = 2.0;
  cfg.day_signal_std = 0.5;
  cfg.member_noise_std = 0.3;
  cfg.seasonal_amplitude = 1.0;
  cfg.n_days = 24;
  cfg.n_members = 5;
  cfg.seed = 3;
  return cfg;
}

// Empirical lag-1 spatial autocorrelation along rows, averaged over draws.
double lag1_autocorr(const fields::EnsembleDataset& ds) {
  double num = 0.0, den = 0.0;
  for (std::int64_t t = 0; t < ds.n_days; ++t) {
    for (std::int64_t m = 0; m < ds.n_members; ++m) {
      for (std::int64_t r = 0; r < ds.height; ++r) {
        for (std::int64_t c = 0; c + 1 < ds.width; ++c) {
          num += ds.at(t, m, r, c) * ds.at(t, m, r, c + 1);
          den += ds.at(t, m, r, c) * ds.at(t, m, r, c);
        }
      }
    }
  }
  return num / den;
}

}  // namespace

TEST_CASE("degenerate config: identical members, purely sinusoidal mode coefficient") {
  GrfConfig cfg = small_config();
  cfg.day_signal_std = 0.0;
  cfg.member_noise_std = 0.0;
  cfg.seasonal_amplitude = 1.0;
  const fields::EnsembleDataset ds = generate(cfg);

  for (std::int64_t t = 0; t < cfg.n_days; ++t) {
    for (std::int64_t m = 1; m < cfg.n_members; ++m) {
      for (std::int64_t r = 0; r < cfg.height; ++r) {
        for (std::int64_t c = 0; c < cfg.width; ++c) {
          CHECK(ds.at(t, m, r, c) == ds.at(t, 0, r, c));
        }
      }
    }
  }

  // Field = sin(2*pi*t/T) * mode: coefficient along the fixed mode follows
  // the sinusoid exactly.
  const Tensor f0 = ds.day_members(ds.n_days / 4);  // t = T/4 -> sin = 1
  double norm0 = 0.0;
  for (std::int64_t i = 0; i < f0.cols(); ++i) norm0 += f0.at2(0, i) * f0.at2(0, i);
  for (std::int64_t t = 0; t < cfg.n_days; ++t) {
    const double expected = std::sin(2.0 * 3.14159265358979323846 * t / cfg.n_days);
    double dot = 0.0;
    for (std::int64_t i = 0; i < f0.cols(); ++i) dot += ds.day_members(t).at2(0, i) * f0.at2(0, i);
    CHECK(dot / norm0 == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("member_noise_std = 0 gives zero ensemble spread at every grid point") {
  GrfConfig cfg = small_config();
  cfg.member_noise_std = 0.0;
  const fields::EnsembleDataset ds = generate(cfg);
  for (std::int64_t t = 0; t < cfg.n_days; ++t) {
    for (std::int64_t r = 0; r < cfg.height; ++r) {
      for (std::int64_t c = 0; c < cfg.width; ++c) {
        // All members coincide, so the ensemble std is exactly zero.
        for (std::int64_t m = 1; m < cfg.n_members; ++m) {
          CHECK(ds.at(t, m, r, c) == ds.at(t, 0, r, c));
        }
      }
    }
  }
}

TEST_CASE("longer length scales raise spatial autocorrelation") {
  GrfConfig smooth = small_config();
  smooth.seasonal_amplitude = 0.0;
  smooth.length_scale = 4.0;
  smooth.n_days = 40;  // 40 x 5 draws = 200 fields per setting
  GrfConfig rough = smooth;
  rough.length_scale = 0.25;

  const double ac_smooth = lag1_autocorr(generate(smooth));
  const double ac_rough = lag1_autocorr(generate(rough));
  CHECK(ac_smooth > ac_rough + 0.3);
  CHECK(ac_smooth > 0.8);
}

TEST_CASE("same seed gives a bit-identical dataset") {
  const GrfConfig cfg = small_config();
  const fields::EnsembleDataset a = generate(cfg);
  const fields::EnsembleDataset b = generate(cfg);
  REQUIRE(a.values.numel() == b.values.numel());
  for (std::int64_t i = 0; i < a.values.numel(); ++i) CHECK(a.values[i] == b.values[i]);

  GrfConfig other = cfg;
  other.seed = 4;
  const fields::EnsembleDataset c = generate(other);
  bool any_diff = false;
  for (std::int64_t i = 0; i < a.values.numel(); ++i) {
    if (a.values[i] != c.values[i]) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("member permutation leaves per-day mean and std fields identical") {
  const GrfConfig cfg = small_config();
  const fields::EnsembleDataset ds = generate(cfg);
  Rng rng(9);
  for (std::int64_t t = 0; t < cfg.n_days; ++t) {
    std::vector<std::int64_t> perm(static_cast<std::size_t>(cfg.n_members));
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
    rng.shuffle(perm);
    for (std::int64_t r = 0; r < cfg.height; ++r) {
      for (std::int64_t c = 0; c < cfg.width; ++c) {
        std::vector<double> orig, permuted;
        for (std::int64_t m = 0; m < cfg.n_members; ++m) {
          orig.push_back(ds.at(t, m, r, c));
          permuted.push_back(ds.at(t, perm[static_cast<std::size_t>(m)], r, c));
        }
        CHECK(exact_sum(orig) == exact_sum(permuted));
        std::vector<double> sq_o, sq_p;
        const double mu = exact_mean(orig);
        for (std::int64_t m = 0; m < cfg.n_members; ++m) {
          sq_o.push_back((orig[static_cast<std::size_t>(m)] - mu) * (orig[static_cast<std::size_t>(m)] - mu));
          sq_p.push_back((permuted[static_cast<std::size_t>(m)] - mu) * (permuted[static_cast<std::size_t>(m)] - mu));
        }
        CHECK(exact_sum(sq_o) == exact_sum(sq_p));
      }
    }
  }
}

TEST_CASE("config validation") {
  GrfConfig cfg = small_config();
  cfg.n_days = 0;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.height = 100;
  cfg.width = 100;  // 10000 cells > 4096
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
  cfg = small_config();
  cfg.length_scale = 0.0;
  CHECK_THROWS_AS(generate(cfg), std::invalid_argument);
}
