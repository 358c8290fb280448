#pragma once

#include <stdexcept>

#include "enslat/tensor.hpp"

namespace enslat {

struct NotPositiveDefinite : std::runtime_error {
  explicit NotPositiveDefinite(const std::string& what) : std::runtime_error(what) {}
};

struct SvdConvergenceError : std::runtime_error {
  explicit SvdConvergenceError(const std::string& what) : std::runtime_error(what) {}
};

// C = A * B. Accepts {m,k}x{k,n} -> {m,n}; a rank-1 operand is treated as a
// row vector on the left ({k}x{k,n} -> {n}) or a column vector on the right
// ({m,k}x{k} -> {m}). Single-threaded, fixed accumulation order.
Tensor matmul(const Tensor& a, const Tensor& b);

// C = A * B^T with A {m,k}, B {n,k} -> {m,n}.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// C = A^T * B with A {m,k}, B {m,n} -> {k,n}.
Tensor matmul_tn(const Tensor& a, const Tensor& b);

Tensor transpose(const Tensor& a);

struct SvdResult {
  Tensor u;   // {m, r} column-orthonormal
  Tensor s;   // {r} non-increasing, r = min(m, n)
  Tensor vt;  // {r, n} row-orthonormal
};

// Thin SVD via Householder QR (for tall inputs) plus one-sided Jacobi.
// Reconstruction error is bounded by ~1e-12 relative on well-scaled input.
SvdResult svd(const Tensor& a, int max_sweeps = 60);

// Lower-triangular L with L * L^T = a. Throws NotPositiveDefinite on a
// non-positive pivot; callers escalate jitter and retry.
Tensor cholesky(const Tensor& a);

}  // namespace enslat
