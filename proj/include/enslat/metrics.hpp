#pragma once

#include <cstdint>
#include <span>

#include "enslat/tape.hpp"
#include "enslat/tensor.hpp"

namespace enslat::metrics {

// Per-pixel |mean(X) - mean(Xt)| for ensembles as {members, pixels} rows.
Tensor pixel_mean_absdiff(const Tensor& x, const Tensor& xt);

// Per-pixel std(X) - std(Xt) with sample (M-1) denominator; negative values
// mean the reconstruction spreads wider than the input.
Tensor pixel_std_diff(const Tensor& x, const Tensor& xt);

// Per-pixel ensemble std with sample (M-1) denominator.
Tensor pixel_std(const Tensor& x);

// Energy distance between two univariate samples, V-statistic form with
// diagonal terms included; returns sqrt of the clamped squared estimate.
double energy_distance_uni(std::span<const double> x, std::span<const double> y);

// Euclidean-norm analogue for {M,d} vs {N,d} sample sets.
double energy_distance_multi(const Tensor& x, const Tensor& xt);

// Order-statistics estimator of W1 for equal-size univariate samples.
double wasserstein1_uni(std::span<const double> x, std::span<const double> y);

struct SinkhornConfig {
  double epsilon = 0.0;      // > 0: explicit; otherwise derived from eps_factor
  double eps_factor = 0.05;  // times mean entry of the cost matrix
  int max_iters = 100;
  double tol = 1e-9;         // max marginal violation for convergence
};

struct SinkhornResult {
  double distance = 0.0;  // sqrt of transport cost, the headline value
  double cost = 0.0;      // <plan, cost> under the regularized plan
  bool converged = false;
  int iters = 0;
  double epsilon = 0.0;   // the regularization actually used
};

// Entropic-regularized OT with uniform weights and squared-Euclidean cost,
// solved by alternating log-domain scaling updates. Non-convergence is not
// an error; the current iterate is returned flagged.
SinkhornResult sinkhorn_distance(const Tensor& x, const Tensor& xt, const SinkhornConfig& cfg = {});

// (S_ref - S_a) / S_ref. NaN when S_ref == 0 (undefined, reported as such).
double skill_score(double s_a, double s_ref);

// Closed-form KL(N(mu, diag(sigma^2)) || N(0, I)).
double kl_std_normal(const Tensor& mu, const Tensor& sigma);

// --- differentiable versions used by the iVAE loss ---------------------------

Tape::Id energy_distance_multi_node(Tape& tape, Tape::Id x, Tape::Id xt);

// Fixed unrolled iteration count; epsilon must be a plain constant so the
// gradient of the unrolled graph matches finite differences exactly.
Tape::Id sinkhorn_distance_node(Tape& tape, Tape::Id x, Tape::Id xt, double epsilon, int iters);

Tape::Id kl_std_normal_node(Tape& tape, Tape::Id mu, Tape::Id sigma, Tape::Id log_sigma);

}  // namespace enslat::metrics
