#include "enslat/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace enslat {

namespace {

void gemm_nn(const double* a, const double* b, double* c, std::int64_t m, std::int64_t k,
             std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::int64_t l = 0; l < k; ++l) {
      const double av = ai[l];
      const double* bl = b + l * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bl[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const bool a_vec = a.rank() == 1;
  const bool b_vec = b.rank() == 1;
  if ((a.rank() != 2 && !a_vec) || (b.rank() != 2 && !b_vec)) {
    throw std::invalid_argument("matmul: expected rank 1 or 2 operands, got " + a.shape_str() +
                                " x " + b.shape_str());
  }
  const std::int64_t m = a_vec ? 1 : a.dim(0);
  const std::int64_t k = a_vec ? a.dim(0) : a.dim(1);
  const std::int64_t k2 = b_vec ? b.dim(0) : b.dim(0);
  const std::int64_t n = b_vec ? 1 : b.dim(1);
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions mismatch " + a.shape_str() + " x " +
                                b.shape_str());
  }
  Tensor c = (a_vec && b_vec)   ? Tensor::zeros({})
             : a_vec            ? Tensor::zeros({n})
             : b_vec            ? Tensor::zeros({m})
                                : Tensor::zeros({m, n});
  gemm_nn(a.data(), b.data(), c.data(), m, k, n);
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  const std::int64_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw std::invalid_argument("matmul_nt: dimensions mismatch " + a.shape_str() + " x " +
                                b.shape_str());
  }
  Tensor c = Tensor::zeros({m, n});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    double* ci = c.data() + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* bj = b.data() + j * k;
      double acc = 0.0;
      for (std::int64_t l = 0; l < k; ++l) acc += ai[l] * bj[l];
      ci[j] = acc;
    }
  }
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != m) {
    throw std::invalid_argument("matmul_tn: dimensions mismatch " + a.shape_str() + " x " +
                                b.shape_str());
  }
  Tensor c = Tensor::zeros({k, n});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* ai = a.data() + i * k;
    const double* bi = b.data() + i * n;
    for (std::int64_t l = 0; l < k; ++l) {
      const double av = ai[l];
      double* cl = c.data() + l * n;
      for (std::int64_t j = 0; j < n; ++j) cl[j] += av * bi[j];
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  const std::int64_t m = a.rows(), n = a.cols();
  Tensor t = Tensor::zeros({n, m});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) t.at2(j, i) = a.at2(i, j);
  }
  return t;
}

namespace {

// Thin Householder QR: a {m,n} with m >= n; fills q {m,n} with orthonormal
// columns and r {n,n} upper triangular.
void householder_qr(const Tensor& a, Tensor& q, Tensor& r) {
  const std::int64_t m = a.rows(), n = a.cols();
  Tensor w = a;  // working copy; reflectors stored below the diagonal
  std::vector<double> diag(static_cast<std::size_t>(n), 0.0);
  std::vector<double> beta(static_cast<std::size_t>(n), 0.0);

  for (std::int64_t kcol = 0; kcol < n; ++kcol) {
    double norm2 = 0.0;
    for (std::int64_t i = kcol; i < m; ++i) norm2 += w.at2(i, kcol) * w.at2(i, kcol);
    const double norm = std::sqrt(norm2);
    const double x0 = w.at2(kcol, kcol);
    const double alpha = (x0 >= 0.0) ? -norm : norm;
    diag[static_cast<std::size_t>(kcol)] = alpha;
    if (norm == 0.0) {
      beta[static_cast<std::size_t>(kcol)] = 0.0;
      continue;
    }
    w.at2(kcol, kcol) = x0 - alpha;
    double vtv = 0.0;
    for (std::int64_t i = kcol; i < m; ++i) vtv += w.at2(i, kcol) * w.at2(i, kcol);
    beta[static_cast<std::size_t>(kcol)] = vtv > 0.0 ? 2.0 / vtv : 0.0;
    for (std::int64_t j = kcol + 1; j < n; ++j) {
      double dot = 0.0;
      for (std::int64_t i = kcol; i < m; ++i) dot += w.at2(i, kcol) * w.at2(i, j);
      const double f = beta[static_cast<std::size_t>(kcol)] * dot;
      for (std::int64_t i = kcol; i < m; ++i) w.at2(i, j) -= f * w.at2(i, kcol);
    }
  }

  r = Tensor::zeros({n, n});
  for (std::int64_t i = 0; i < n; ++i) {
    r.at2(i, i) = diag[static_cast<std::size_t>(i)];
    for (std::int64_t j = i + 1; j < n; ++j) r.at2(i, j) = w.at2(i, j);
  }

  // Accumulate the thin Q by applying reflectors back to front to I(m, n).
  q = Tensor::zeros({m, n});
  for (std::int64_t j = 0; j < n; ++j) q.at2(j, j) = 1.0;
  for (std::int64_t kcol = n - 1; kcol >= 0; --kcol) {
    const double bk = beta[static_cast<std::size_t>(kcol)];
    if (bk == 0.0) continue;
    for (std::int64_t j = 0; j < n; ++j) {
      double dot = 0.0;
      for (std::int64_t i = kcol; i < m; ++i) dot += w.at2(i, kcol) * q.at2(i, j);
      const double f = bk * dot;
      for (std::int64_t i = kcol; i < m; ++i) q.at2(i, j) -= f * w.at2(i, kcol);
    }
  }
}

// One-sided (Hestenes) Jacobi: orthogonalizes the columns of w {m,n} in
// place, accumulating right rotations into v {n,n}. After convergence
// w = U * diag(s) with s the column norms.
void jacobi_orthogonalize(Tensor& w, Tensor& v, int max_sweeps) {
  const std::int64_t m = w.rows(), n = w.cols();
  const double tol = 1e-14;
  // Columns whose norm falls below this are numerical null space; rotating
  // against them chases roundoff noise forever.
  double fro2 = 0.0;
  for (double x : w.values()) fro2 += x * x;
  const double negligible = fro2 * 1e-26;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::int64_t p = 0; p < n - 1; ++p) {
      for (std::int64_t q = p + 1; q < n; ++q) {
        double alpha = 0.0, betaq = 0.0, gamma = 0.0;
        for (std::int64_t i = 0; i < m; ++i) {
          const double wp = w.at2(i, p), wq = w.at2(i, q);
          alpha += wp * wp;
          betaq += wq * wq;
          gamma += wp * wq;
        }
        if (alpha <= negligible || betaq <= negligible) continue;
        if (gamma == 0.0 || gamma * gamma <= tol * tol * alpha * betaq) continue;
        rotated = true;
        const double zeta = (betaq - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) / (std::fabs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::int64_t i = 0; i < m; ++i) {
          const double wp = w.at2(i, p), wq = w.at2(i, q);
          w.at2(i, p) = c * wp - s * wq;
          w.at2(i, q) = s * wp + c * wq;
        }
        for (std::int64_t i = 0; i < n; ++i) {
          const double vp = v.at2(i, p), vq = v.at2(i, q);
          v.at2(i, p) = c * vp - s * vq;
          v.at2(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw SvdConvergenceError("svd: Jacobi sweep cap reached without convergence");
}

// SVD of a {m,n} with m >= n.
SvdResult svd_tall(const Tensor& a, int max_sweeps) {
  const std::int64_t m = a.rows(), n = a.cols();

  Tensor w, v;
  Tensor q_pre;  // set when a QR pre-step is used
  if (m > 2 * n) {
    Tensor r;
    householder_qr(a, q_pre, r);
    w = r;
  } else {
    w = a;
  }
  v = Tensor::zeros({n, n});
  for (std::int64_t i = 0; i < n; ++i) v.at2(i, i) = 1.0;
  jacobi_orthogonalize(w, v, max_sweeps);

  const std::int64_t wm = w.rows();
  std::vector<double> snorm(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::int64_t i = 0; i < wm; ++i) acc += w.at2(i, j) * w.at2(i, j);
    snorm[static_cast<std::size_t>(j)] = std::sqrt(acc);
  }

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
    return snorm[static_cast<std::size_t>(x)] > snorm[static_cast<std::size_t>(y)];
  });

  Tensor s = Tensor::zeros({n});
  Tensor u = Tensor::zeros({wm, n});
  Tensor vt = Tensor::zeros({n, n});
  const double smax = snorm[static_cast<std::size_t>(order[0])];
  const double tiny = smax * 1e-10;

  std::int64_t out = 0;
  std::vector<std::int64_t> needs_fill;
  for (std::int64_t j : order) {
    const double sj = snorm[static_cast<std::size_t>(j)];
    s[out] = sj;
    for (std::int64_t i = 0; i < n; ++i) vt.at2(out, i) = v.at2(i, j);
    if (sj > tiny && sj > 0.0) {
      for (std::int64_t i = 0; i < wm; ++i) u.at2(i, out) = w.at2(i, j) / sj;
    } else {
      needs_fill.push_back(out);
    }
    ++out;
  }

  // Negligible singular directions get replaced by an orthonormal
  // completion so U stays column-orthonormal even for rank-deficient input.
  for (std::int64_t col : needs_fill) {
    bool placed = false;
    for (std::int64_t cand = 0; cand < wm && !placed; ++cand) {
      std::vector<double> vec(static_cast<std::size_t>(wm), 0.0);
      vec[static_cast<std::size_t>(cand)] = 1.0;
      for (int pass = 0; pass < 2; ++pass) {
        for (std::int64_t j = 0; j < n; ++j) {
          if (j == col) continue;
          bool is_unfilled = false;
          for (std::int64_t f : needs_fill) {
            if (f == j && f > col) is_unfilled = true;
          }
          if (is_unfilled) continue;
          double dot = 0.0;
          for (std::int64_t i = 0; i < wm; ++i) dot += vec[static_cast<std::size_t>(i)] * u.at2(i, j);
          for (std::int64_t i = 0; i < wm; ++i) vec[static_cast<std::size_t>(i)] -= dot * u.at2(i, j);
        }
      }
      double norm = 0.0;
      for (double x : vec) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 0.5) {
        for (std::int64_t i = 0; i < wm; ++i) u.at2(i, col) = vec[static_cast<std::size_t>(i)] / norm;
        placed = true;
      }
    }
    if (!placed) throw SvdConvergenceError("svd: failed to complete orthonormal basis");
  }

  if (!q_pre.empty()) u = matmul(q_pre, u);
  return {std::move(u), std::move(s), std::move(vt)};
}

}  // namespace

SvdResult svd(const Tensor& a, int max_sweeps) {
  if (a.rank() != 2) throw std::invalid_argument("svd: expected rank-2 tensor");
  if (!a.all_finite()) throw std::invalid_argument("svd: non-finite entries");
  const std::int64_t m = a.rows(), n = a.cols();
  if (m == 0 || n == 0) throw std::invalid_argument("svd: empty matrix");
  if (m >= n) return svd_tall(a, max_sweeps);
  // svd(a) = (svd(a^T) with U and V swapped).
  SvdResult r = svd_tall(transpose(a), max_sweeps);
  return {transpose(r.vt), std::move(r.s), transpose(r.u)};
}

Tensor cholesky(const Tensor& a) {
  if (a.rank() != 2 || a.rows() != a.cols()) {
    throw std::invalid_argument("cholesky: expected square matrix, got " + a.shape_str());
  }
  const std::int64_t n = a.rows();
  double max_abs = 0.0;
  for (double x : a.values()) max_abs = std::max(max_abs, std::fabs(x));
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = i + 1; j < n; ++j) {
      if (std::fabs(a.at2(i, j) - a.at2(j, i)) > 1e-8 * (1.0 + max_abs)) {
        throw std::invalid_argument("cholesky: matrix not symmetric");
      }
    }
  }

  Tensor l = Tensor::zeros({n, n});
  for (std::int64_t j = 0; j < n; ++j) {
    double diag = a.at2(j, j);
    for (std::int64_t k = 0; k < j; ++k) diag -= l.at2(j, k) * l.at2(j, k);
    if (diag <= 0.0) {
      throw NotPositiveDefinite("cholesky: non-positive pivot at index " + std::to_string(j));
    }
    const double ljj = std::sqrt(diag);
    l.at2(j, j) = ljj;
    for (std::int64_t i = j + 1; i < n; ++i) {
      double acc = a.at2(i, j);
      for (std::int64_t k = 0; k < j; ++k) acc -= l.at2(i, k) * l.at2(j, k);
      l.at2(i, j) = acc / ljj;
    }
  }
  return l;
}

}  // namespace enslat
