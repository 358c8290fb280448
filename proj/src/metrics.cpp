#include "enslat/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace enslat::metrics {

namespace {

void check_ensembles(const Tensor& x, const Tensor& xt, const char* opname) {
  if (x.rank() != 2 || xt.rank() != 2 || x.cols() != xt.cols()) {
    throw std::invalid_argument(std::string(opname) + ": ensembles " + x.shape_str() + " vs " +
                                xt.shape_str());
  }
}

// Column mean with exact summation; keeps metrics bit-invariant to member
// permutation.
double column_mean(const Tensor& e, std::int64_t j) {
  thread_local std::vector<double> buf;
  buf.resize(static_cast<std::size_t>(e.rows()));
  for (std::int64_t i = 0; i < e.rows(); ++i) buf[static_cast<std::size_t>(i)] = e.at2(i, j);
  return exact_mean(buf);
}

double column_sample_std(const Tensor& e, std::int64_t j) {
  const std::int64_t m = e.rows();
  const double mean = column_mean(e, j);
  thread_local std::vector<double> buf;
  buf.resize(static_cast<std::size_t>(m));
  for (std::int64_t i = 0; i < m; ++i) {
    const double c = e.at2(i, j) - mean;
    buf[static_cast<std::size_t>(i)] = c * c;
  }
  return std::sqrt(exact_sum(buf) / static_cast<double>(m - 1));
}

}  // namespace

Tensor pixel_mean_absdiff(const Tensor& x, const Tensor& xt) {
  check_ensembles(x, xt, "pixel_mean_absdiff");
  const std::int64_t d = x.cols();
  Tensor out = Tensor::zeros({d});
  for (std::int64_t j = 0; j < d; ++j) {
    out[j] = std::fabs(column_mean(x, j) - column_mean(xt, j));
  }
  return out;
}

Tensor pixel_std(const Tensor& x) {
  if (x.rank() != 2 || x.rows() < 2) {
    throw std::invalid_argument("pixel_std: need at least 2 members");
  }
  const std::int64_t d = x.cols();
  Tensor out = Tensor::zeros({d});
  for (std::int64_t j = 0; j < d; ++j) out[j] = column_sample_std(x, j);
  return out;
}

Tensor pixel_std_diff(const Tensor& x, const Tensor& xt) {
  check_ensembles(x, xt, "pixel_std_diff");
  if (x.rows() < 2 || xt.rows() < 2) {
    throw std::invalid_argument("pixel_std_diff: need at least 2 members per ensemble");
  }
  const std::int64_t d = x.cols();
  Tensor out = Tensor::zeros({d});
  for (std::int64_t j = 0; j < d; ++j) {
    out[j] = column_sample_std(x, j) - column_sample_std(xt, j);
  }
  return out;
}

namespace {

// Mean over all ordered pairs of |x_i - y_j| (diagonal included when x == y).
double mean_abs_cross(std::span<const double> x, std::span<const double> y) {
  thread_local std::vector<double> terms;
  terms.clear();
  terms.reserve(x.size() * y.size());
  for (double a : x) {
    for (double b : y) terms.push_back(std::fabs(a - b));
  }
  return exact_sum(terms) / (static_cast<double>(x.size()) * static_cast<double>(y.size()));
}

double row_dist(const Tensor& a, std::int64_t i, const Tensor& b, std::int64_t j) {
  const std::int64_t d = a.cols();
  const double* ai = a.data() + i * d;
  const double* bj = b.data() + j * d;
  thread_local std::vector<double> sq;
  sq.resize(static_cast<std::size_t>(d));
  for (std::int64_t l = 0; l < d; ++l) {
    const double diff = ai[l] - bj[l];
    sq[static_cast<std::size_t>(l)] = diff * diff;
  }
  return std::sqrt(exact_sum(sq));
}

double mean_dist_cross(const Tensor& a, const Tensor& b) {
  thread_local std::vector<double> terms;
  terms.clear();
  terms.reserve(static_cast<std::size_t>(a.rows() * b.rows()));
  for (std::int64_t i = 0; i < a.rows(); ++i) {
    for (std::int64_t j = 0; j < b.rows(); ++j) terms.push_back(row_dist(a, i, b, j));
  }
  return exact_sum(terms) / (static_cast<double>(a.rows()) * static_cast<double>(b.rows()));
}

}  // namespace

double energy_distance_uni(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw std::invalid_argument("energy_distance_uni: empty sample");
  const double cross = mean_abs_cross(x, y);
  const double within_x = mean_abs_cross(x, x);
  const double within_y = mean_abs_cross(y, y);
  // Grouped so that swapping the arguments gives a bit-identical result.
  const double d2 = 2.0 * cross - (within_x + within_y);
  return std::sqrt(std::max(d2, 0.0));
}

double energy_distance_multi(const Tensor& x, const Tensor& xt) {
  check_ensembles(x, xt, "energy_distance_multi");
  if (x.rows() < 1 || xt.rows() < 1) {
    throw std::invalid_argument("energy_distance_multi: empty ensemble");
  }
  const double cross = mean_dist_cross(x, xt);
  const double within_x = mean_dist_cross(x, x);
  const double within_y = mean_dist_cross(xt, xt);
  const double d2 = 2.0 * cross - (within_x + within_y);
  return std::sqrt(std::max(d2, 0.0));
}

double wasserstein1_uni(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw std::invalid_argument("wasserstein1_uni: the order-statistics estimator needs equal sizes");
  }
  if (x.empty()) throw std::invalid_argument("wasserstein1_uni: empty sample");
  std::vector<double> xs(x.begin(), x.end());
  std::vector<double> ys(y.begin(), y.end());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  std::vector<double> terms(xs.size());
  for (std::size_t k = 0; k < xs.size(); ++k) terms[k] = std::fabs(xs[k] - ys[k]);
  return exact_mean(terms);
}

SinkhornResult sinkhorn_distance(const Tensor& x, const Tensor& xt, const SinkhornConfig& cfg) {
  check_ensembles(x, xt, "sinkhorn_distance");
  const std::int64_t m = x.rows(), n = xt.rows();
  if (m < 1 || n < 1) throw std::invalid_argument("sinkhorn_distance: empty ensemble");
  if (cfg.max_iters < 1) throw std::invalid_argument("sinkhorn_distance: max_iters < 1");

  // Squared-Euclidean cost, exact row sums for permutation invariance.
  Tensor c = Tensor::zeros({m, n});
  {
    thread_local std::vector<double> sq;
    sq.resize(static_cast<std::size_t>(x.cols()));
    for (std::int64_t i = 0; i < m; ++i) {
      const double* xi = x.data() + i * x.cols();
      for (std::int64_t j = 0; j < n; ++j) {
        const double* yj = xt.data() + j * xt.cols();
        for (std::int64_t l = 0; l < x.cols(); ++l) {
          const double diff = xi[l] - yj[l];
          sq[static_cast<std::size_t>(l)] = diff * diff;
        }
        c.at2(i, j) = exact_sum(sq);
      }
    }
  }

  double eps = cfg.epsilon;
  if (eps <= 0.0) {
    eps = cfg.eps_factor * exact_mean(c.values());
    if (eps <= 0.0) eps = 1e-12;  // all costs zero: any plan is optimal
  }

  const double log_a = -std::log(static_cast<double>(m));
  const double log_b = -std::log(static_cast<double>(n));
  std::vector<double> f(static_cast<std::size_t>(m), 0.0);
  std::vector<double> g(static_cast<std::size_t>(n), 0.0);
  std::vector<double> expo;

  auto lse_over = [&](std::span<const double> vals) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : vals) mx = std::max(mx, v);
    thread_local std::vector<double> ex;
    ex.resize(vals.size());
    for (std::size_t i = 0; i < vals.size(); ++i) ex[i] = std::exp(vals[i] - mx);
    return mx + std::log(exact_sum(ex));
  };

  auto sweep = [&](double level_eps) {
    // f_i = eps*log a_i - eps*LSE_j((g_j - C_ij)/eps), then the g update.
    for (std::int64_t i = 0; i < m; ++i) {
      expo.resize(static_cast<std::size_t>(n));
      for (std::int64_t j = 0; j < n; ++j) {
        expo[static_cast<std::size_t>(j)] =
            (g[static_cast<std::size_t>(j)] - c.at2(i, j)) / level_eps;
      }
      f[static_cast<std::size_t>(i)] = level_eps * log_a - level_eps * lse_over(expo);
    }
    for (std::int64_t j = 0; j < n; ++j) {
      expo.resize(static_cast<std::size_t>(m));
      for (std::int64_t i = 0; i < m; ++i) {
        expo[static_cast<std::size_t>(i)] =
            (f[static_cast<std::size_t>(i)] - c.at2(i, j)) / level_eps;
      }
      g[static_cast<std::size_t>(j)] = level_eps * log_b - level_eps * lse_over(expo);
    }
  };

  // Epsilon scaling: warm-start the duals from a loose regularization and
  // halve toward the target. Plain iterations stall for eps far below the
  // cost scale; annealing reaches the same fixed point in a few dozen sweeps.
  const double mean_cost = exact_mean(c.values());
  if (mean_cost > 0.0) {
    for (double level = mean_cost; level > eps; level *= 0.5) {
      for (int it = 0; it < 4; ++it) sweep(level);
    }
  }

  SinkhornResult result;
  result.epsilon = eps;
  int iter = 0;
  bool converged = false;
  for (; iter < cfg.max_iters; ++iter) {
    sweep(eps);

    // After the g update column marginals are exact; check rows.
    double violation = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      thread_local std::vector<double> row;
      row.resize(static_cast<std::size_t>(n));
      for (std::int64_t j = 0; j < n; ++j) {
        row[static_cast<std::size_t>(j)] = std::exp(
            (f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(j)] - c.at2(i, j)) / eps);
      }
      violation = std::max(violation, std::fabs(exact_sum(row) - std::exp(log_a)));
    }
    if (violation < cfg.tol) {
      converged = true;
      ++iter;
      break;
    }
  }

  thread_local std::vector<double> terms;
  terms.clear();
  terms.reserve(static_cast<std::size_t>(m * n));
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      const double p = std::exp(
          (f[static_cast<std::size_t>(i)] + g[static_cast<std::size_t>(j)] - c.at2(i, j)) / eps);
      terms.push_back(p * c.at2(i, j));
    }
  }
  result.cost = std::max(exact_sum(terms), 0.0);
  result.distance = std::sqrt(result.cost);
  result.converged = converged;
  result.iters = iter;
  return result;
}

double skill_score(double s_a, double s_ref) {
  if (s_ref == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return (s_ref - s_a) / s_ref;
}

double kl_std_normal(const Tensor& mu, const Tensor& sigma) {
  if (!mu.same_shape(sigma)) throw std::invalid_argument("kl_std_normal: shape mismatch");
  std::vector<double> terms(static_cast<std::size_t>(mu.numel()));
  for (std::int64_t i = 0; i < mu.numel(); ++i) {
    const double s2 = sigma[i] * sigma[i];
    terms[static_cast<std::size_t>(i)] = mu[i] * mu[i] + s2 - 1.0 - std::log(s2);
  }
  return 0.5 * exact_sum(terms);
}

// --- tape builders ------------------------------------------------------------

Tape::Id energy_distance_multi_node(Tape& tape, Tape::Id x, Tape::Id xt) {
  const Tape::Id cross = tape.mean(tape.pairwise_dist(x, xt));
  const Tape::Id within_x = tape.mean(tape.pairwise_dist(x, x));
  const Tape::Id within_y = tape.mean(tape.pairwise_dist(xt, xt));
  const Tape::Id d2 = tape.sub(tape.sub(tape.scale(cross, 2.0), within_x), within_y);
  return tape.sqrt_clamped(d2);
}

Tape::Id sinkhorn_distance_node(Tape& tape, Tape::Id x, Tape::Id xt, double epsilon, int iters) {
  if (epsilon <= 0.0) throw std::invalid_argument("sinkhorn_distance_node: epsilon must be positive");
  if (iters < 1) throw std::invalid_argument("sinkhorn_distance_node: iters < 1");
  const std::int64_t m = tape.value(x).rows();
  const std::int64_t n = tape.value(xt).rows();
  const double log_a = -std::log(static_cast<double>(m));
  const double log_b = -std::log(static_cast<double>(n));

  const Tape::Id c = tape.pairwise_sqdist(x, xt);
  const Tape::Id neg_c = tape.scale(c, -1.0);

  Tape::Id f = tape.constant(Tensor::zeros({m}));
  Tape::Id g = tape.constant(Tensor::zeros({n}));
  for (int it = 0; it < iters; ++it) {
    // f = eps*log a - eps*LSE_j((g_j - C_ij)/eps)
    Tape::Id rows = tape.scale(tape.add_rowvec(neg_c, g), 1.0 / epsilon);
    f = tape.add_scalar(tape.scale(tape.logsumexp_rows(rows), -epsilon), epsilon * log_a);
    Tape::Id cols = tape.scale(tape.add_colvec(neg_c, f), 1.0 / epsilon);
    g = tape.add_scalar(tape.scale(tape.logsumexp_cols(cols), -epsilon), epsilon * log_b);
  }

  // P = exp((f_i + g_j - C_ij)/eps); transport cost = sum(P * C).
  const Tape::Id logits = tape.scale(tape.add_colvec(tape.add_rowvec(neg_c, g), f), 1.0 / epsilon);
  const Tape::Id plan = tape.exp(logits);
  const Tape::Id cost = tape.sum(tape.mul(plan, c));
  return tape.sqrt_clamped(cost);
}

Tape::Id kl_std_normal_node(Tape& tape, Tape::Id mu, Tape::Id sigma, Tape::Id log_sigma) {
  const Tape::Id mu2 = tape.mul(mu, mu);
  const Tape::Id sig2 = tape.mul(sigma, sigma);
  const Tape::Id inner = tape.sub(tape.add_scalar(tape.add(mu2, sig2), -1.0),
                                  tape.scale(log_sigma, 2.0));
  return tape.scale(tape.sum(inner), 0.5);
}

}  // namespace enslat::metrics
