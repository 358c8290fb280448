#include "enslat/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "enslat/linalg.hpp"

namespace enslat {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* opname) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(opname) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

}  // namespace

const Tape::Node& Tape::node(Id id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw std::invalid_argument("Tape: id " + std::to_string(id) + " not recorded on this tape");
  }
  return nodes_[static_cast<std::size_t>(id)];
}

Tape::Node& Tape::node(Id id) {
  return const_cast<Node&>(static_cast<const Tape*>(this)->node(id));
}

Tape::Id Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Tape::Id Tape::param(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  const Id id = push(std::move(n));
  params_.push_back(id);
  return id;
}

const Tensor& Tape::grad(Id id) const {
  if (!ran_backward_) throw std::logic_error("Tape::grad: backward() has not run");
  return grads_[static_cast<std::size_t>(id)];
}

void Tape::accumulate(Id target, const Tensor& g) {
  if (!node(target).needs_grad) return;
  Tensor& slot = grads_[static_cast<std::size_t>(target)];
  if (slot.empty()) {
    slot = g;
    return;
  }
  double* dst = slot.data();
  const double* src = g.data();
  const std::int64_t n = slot.numel();
  for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
}

void Tape::backward(Id loss) {
  if (ran_backward_) throw std::logic_error("Tape::backward: already ran on this tape");
  const Node& ln = node(loss);
  if (ln.value.numel() != 1) {
    throw std::invalid_argument("Tape::backward: loss is not scalar, shape " + ln.value.shape_str());
  }
  ran_backward_ = true;
  grads_.assign(nodes_.size(), Tensor{});

  Tensor seed = ln.value;  // same shape as the loss node
  for (double& x : seed.values()) x = 1.0;
  grads_[static_cast<std::size_t>(loss)] = std::move(seed);

  for (Id id = loss; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    const Tensor& g = grads_[static_cast<std::size_t>(id)];
    if (!n.needs_grad || g.empty() || !n.backward) continue;
    n.backward(*this, g);
  }

  // Every registered parameter reports a gradient, even if disconnected.
  for (Id pid : params_) {
    Tensor& slot = grads_[static_cast<std::size_t>(pid)];
    if (slot.empty()) slot = Tensor::zeros(node(pid).value.shape());
  }
}

Tape::Id Tape::matmul(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  Tensor out = enslat::matmul(av, bv);
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.parent_b = b;
  n.needs_grad = tracked(a) || tracked(b);
  const bool a_vec = av.rank() == 1;
  n.backward = [a, b, a_vec](Tape& t, const Tensor& og) {
    const Tensor& av2 = t.value(a);
    const Tensor& bv2 = t.value(b);
    // View rank-1 operands/grads as matrices for the transposed products.
    Tensor a_m = a_vec ? Tensor({1, av2.dim(0)}, {av2.values().begin(), av2.values().end()}) : av2;
    Tensor og_m = a_vec ? Tensor({1, og.numel()}, {og.values().begin(), og.values().end()})
                        : (og.rank() == 1 ? Tensor({og.dim(0), 1}, {og.values().begin(), og.values().end()})
                                          : og);
    Tensor b_m = bv2.rank() == 1
                     ? Tensor({bv2.dim(0), 1}, {bv2.values().begin(), bv2.values().end()})
                     : bv2;
    if (t.tracked(a)) {
      Tensor da = matmul_nt(og_m, b_m);  // {m,n}*{k,n}^T -> {m,k}
      t.accumulate(a, Tensor(av2.shape(), {da.values().begin(), da.values().end()}));
    }
    if (t.tracked(b)) {
      Tensor db = matmul_tn(a_m, og_m);  // {m,k}^T*{m,n} -> {k,n}
      t.accumulate(b, Tensor(bv2.shape(), {db.values().begin(), db.values().end()}));
    }
  };
  return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "add");
  Tensor out = av;
  const double* src = bv.data();
  double* dst = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) dst[i] += src[i];
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.parent_b = b;
  n.needs_grad = tracked(a) || tracked(b);
  n.backward = [a, b](Tape& t, const Tensor& og) {
    t.accumulate(a, og);
    t.accumulate(b, og);
  };
  return push(std::move(n));
}

Tape::Id Tape::sub(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "sub");
  Tensor out = av;
  const double* src = bv.data();
  double* dst = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) dst[i] -= src[i];
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.parent_b = b;
  n.needs_grad = tracked(a) || tracked(b);
  n.backward = [a, b](Tape& t, const Tensor& og) {
    t.accumulate(a, og);
    if (!t.tracked(b)) return;
    Tensor neg = og;
    for (double& x : neg.values()) x = -x;
    t.accumulate(b, neg);
  };
  return push(std::move(n));
}

Tape::Id Tape::mul(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_same_shape(av, bv, "mul");
  Tensor out = av;
  const double* src = bv.data();
  double* dst = out.data();
  for (std::int64_t i = 0; i < out.numel(); ++i) dst[i] *= src[i];
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.parent_b = b;
  n.needs_grad = tracked(a) || tracked(b);
  n.backward = [a, b](Tape& t, const Tensor& og) {
    if (t.tracked(a)) {
      Tensor da = og;
      const double* bp = t.value(b).data();
      double* dp = da.data();
      for (std::int64_t i = 0; i < da.numel(); ++i) dp[i] *= bp[i];
      t.accumulate(a, da);
    }
    if (t.tracked(b)) {
      Tensor db = og;
      const double* ap = t.value(a).data();
      double* dp = db.data();
      for (std::int64_t i = 0; i < db.numel(); ++i) dp[i] *= ap[i];
      t.accumulate(b, db);
    }
  };
  return push(std::move(n));
}

Tape::Id Tape::scale(Id a, double c) {
  Tensor out = value(a);
  for (double& x : out.values()) x *= c;
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a, c](Tape& t, const Tensor& og) {
    Tensor da = og;
    for (double& x : da.values()) x *= c;
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::add_scalar(Id a, double c) {
  Tensor out = value(a);
  for (double& x : out.values()) x += c;
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a](Tape& t, const Tensor& og) { t.accumulate(a, og); };
  return push(std::move(n));
}

Tape::Id Tape::add_rowvec(Id a, Id v) {
  const Tensor& av = value(a);
  const Tensor& vv = value(v);
  if (av.rank() != 2 || vv.rank() != 1 || av.cols() != vv.dim(0)) {
    throw std::invalid_argument("add_rowvec: shapes " + av.shape_str() + " + " + vv.shape_str());
  }
  Tensor out = av;
  const std::int64_t m = av.rows(), ncols = av.cols();
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = out.data() + i * ncols;
    for (std::int64_t j = 0; j < ncols; ++j) row[j] += vv[j];
  }
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.parent_b = v;
  n.needs_grad = tracked(a) || tracked(v);
  n.backward = [a, v, m, ncols](Tape& t, const Tensor& og) {
    t.accumulate(a, og);
    if (!t.tracked(v)) return;
    Tensor dv = Tensor::zeros({ncols});
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = og.data() + i * ncols;
      for (std::int64_t j = 0; j < ncols; ++j) dv[j] += row[j];
    }
    t.accumulate(v, dv);
  };
  return push(std::move(n));
}

Tape::Id Tape::add_colvec(Id a, Id v) {
  const Tensor& av = value(a);
  const Tensor& vv = value(v);
  if (av.rank() != 2 || vv.rank() != 1 || av.rows() != vv.dim(0)) {
    throw std::invalid_argument("add_colvec: shapes " + av.shape_str() + " + " + vv.shape_str());
  }
  Tensor out = av;
  const std::int64_t m = av.rows(), ncols = av.cols();
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = out.data() + i * ncols;
    for (std::int64_t j = 0; j < ncols; ++j) row[j] += vv[i];
  }
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.parent_b = v;
  n.needs_grad = tracked(a) || tracked(v);
  n.backward = [a, v, m, ncols](Tape& t, const Tensor& og) {
    t.accumulate(a, og);
    if (!t.tracked(v)) return;
    Tensor dv = Tensor::zeros({m});
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = og.data() + i * ncols;
      double acc = 0.0;
      for (std::int64_t j = 0; j < ncols; ++j) acc += row[j];
      dv[i] = acc;
    }
    t.accumulate(v, dv);
  };
  return push(std::move(n));
}

Tape::Id Tape::broadcast_rows(Id v, std::int64_t m) {
  const Tensor& vv = value(v);
  if (vv.rank() != 1) throw std::invalid_argument("broadcast_rows: expected rank-1 input");
  const std::int64_t ncols = vv.dim(0);
  Tensor out = Tensor::zeros({m, ncols});
  for (std::int64_t i = 0; i < m; ++i) {
    double* row = out.data() + i * ncols;
    for (std::int64_t j = 0; j < ncols; ++j) row[j] = vv[j];
  }
  Node n;
  n.value = std::move(out);
  n.parent_a = v;
  n.needs_grad = tracked(v);
  n.backward = [v, m, ncols](Tape& t, const Tensor& og) {
    Tensor dv = Tensor::zeros({ncols});
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = og.data() + i * ncols;
      for (std::int64_t j = 0; j < ncols; ++j) dv[j] += row[j];
    }
    t.accumulate(v, dv);
  };
  return push(std::move(n));
}

Tape::Id Tape::leaky_relu(Id a, double slope) {
  Tensor out = value(a);
  for (double& x : out.values()) x = x > 0.0 ? x : slope * x;
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a, slope](Tape& t, const Tensor& og) {
    Tensor da = og;
    const double* xv = t.value(a).data();
    double* dp = da.data();
    for (std::int64_t i = 0; i < da.numel(); ++i) dp[i] *= xv[i] > 0.0 ? 1.0 : slope;
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::exp(Id a) {
  Tensor out = value(a);
  for (double& x : out.values()) x = std::exp(x);
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  const Id self_hint = static_cast<Id>(nodes_.size());
  n.backward = [a, self_hint](Tape& t, const Tensor& og) {
    Tensor da = og;
    const double* ev = t.value(self_hint).data();
    double* dp = da.data();
    for (std::int64_t i = 0; i < da.numel(); ++i) dp[i] *= ev[i];
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::log(Id a) {
  Tensor out = value(a);
  for (double& x : out.values()) x = std::log(x);
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a](Tape& t, const Tensor& og) {
    Tensor da = og;
    const double* xv = t.value(a).data();
    double* dp = da.data();
    for (std::int64_t i = 0; i < da.numel(); ++i) dp[i] /= xv[i];
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::sqrt_clamped(Id a) {
  Tensor out = value(a);
  for (double& x : out.values()) x = x > 0.0 ? std::sqrt(x) : 0.0;
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  const Id self_hint = static_cast<Id>(nodes_.size());
  n.backward = [a, self_hint](Tape& t, const Tensor& og) {
    Tensor da = og;
    const double* xv = t.value(a).data();
    const double* yv = t.value(self_hint).data();
    double* dp = da.data();
    for (std::int64_t i = 0; i < da.numel(); ++i) {
      dp[i] = xv[i] > 0.0 ? dp[i] * 0.5 / yv[i] : 0.0;
    }
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::abs(Id a) {
  Tensor out = value(a);
  for (double& x : out.values()) x = std::fabs(x);
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a](Tape& t, const Tensor& og) {
    Tensor da = og;
    const double* xv = t.value(a).data();
    double* dp = da.data();
    for (std::int64_t i = 0; i < da.numel(); ++i) {
      dp[i] *= xv[i] > 0.0 ? 1.0 : (xv[i] < 0.0 ? -1.0 : 0.0);
    }
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  Tensor out = value(a);
  for (double& x : out.values()) x = std::min(std::max(x, lo), hi);
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a, lo, hi](Tape& t, const Tensor& og) {
    Tensor da = og;
    const double* xv = t.value(a).data();
    double* dp = da.data();
    for (std::int64_t i = 0; i < da.numel(); ++i) {
      if (xv[i] < lo || xv[i] > hi) dp[i] = 0.0;
    }
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::sum(Id a) {
  const Tensor& av = value(a);
  double acc = 0.0;
  for (double x : av.values()) acc += x;
  Node n;
  n.value = Tensor::scalar(acc);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a](Tape& t, const Tensor& og) {
    Tensor da = Tensor::full(t.value(a).shape(), og.item());
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::mean(Id a) {
  const Tensor& av = value(a);
  if (av.numel() == 0) throw std::invalid_argument("mean: empty tensor");
  double acc = 0.0;
  for (double x : av.values()) acc += x;
  const double inv = 1.0 / static_cast<double>(av.numel());
  Node n;
  n.value = Tensor::scalar(acc * inv);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a, inv](Tape& t, const Tensor& og) {
    Tensor da = Tensor::full(t.value(a).shape(), og.item() * inv);
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::mean_rows(Id a) {
  const Tensor& av = value(a);
  if (av.rank() != 2) throw std::invalid_argument("mean_rows: expected rank-2 input");
  const std::int64_t m = av.rows(), ncols = av.cols();
  if (m == 0) throw std::invalid_argument("mean_rows: zero rows");
  Tensor out = Tensor::zeros({ncols});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* row = av.data() + i * ncols;
    for (std::int64_t j = 0; j < ncols; ++j) out[j] += row[j];
  }
  const double inv = 1.0 / static_cast<double>(m);
  for (double& x : out.values()) x *= inv;
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a, m, ncols, inv](Tape& t, const Tensor& og) {
    Tensor da = Tensor::zeros({m, ncols});
    for (std::int64_t i = 0; i < m; ++i) {
      double* row = da.data() + i * ncols;
      for (std::int64_t j = 0; j < ncols; ++j) row[j] = og[j] * inv;
    }
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::slice_cols(Id a, std::int64_t c0, std::int64_t c1) {
  const Tensor& av = value(a);
  const std::int64_t width = av.rank() == 2 ? av.cols() : av.dim(0);
  if (c0 < 0 || c1 <= c0 || c1 > width) throw std::invalid_argument("slice_cols: bad range");
  const std::int64_t span = c1 - c0;
  Tensor out;
  if (av.rank() == 2) {
    const std::int64_t m = av.rows();
    out = Tensor::zeros({m, span});
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < span; ++j) out.at2(i, j) = av.at2(i, c0 + j);
    }
  } else if (av.rank() == 1) {
    out = Tensor::zeros({span});
    for (std::int64_t j = 0; j < span; ++j) out[j] = av[c0 + j];
  } else {
    throw std::invalid_argument("slice_cols: expected rank 1 or 2");
  }
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  n.backward = [a, c0, span](Tape& t, const Tensor& og) {
    const Tensor& av2 = t.value(a);
    Tensor da = Tensor::zeros(av2.shape());
    if (av2.rank() == 2) {
      for (std::int64_t i = 0; i < av2.rows(); ++i) {
        for (std::int64_t j = 0; j < span; ++j) da.at2(i, c0 + j) = og.at2(i, j);
      }
    } else {
      for (std::int64_t j = 0; j < span; ++j) da[c0 + j] = og[j];
    }
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

namespace {

void check_pairwise(const Tensor& a, const Tensor& b, const char* opname) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(opname) + ": shapes " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

}  // namespace

Tape::Id Tape::pairwise_sqdist(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_pairwise(av, bv, "pairwise_sqdist");
  const std::int64_t m = av.rows(), nn = bv.rows(), d = av.cols();
  Tensor out = Tensor::zeros({m, nn});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* ai = av.data() + i * d;
    for (std::int64_t j = 0; j < nn; ++j) {
      const double* bj = bv.data() + j * d;
      double acc = 0.0;
      for (std::int64_t l = 0; l < d; ++l) {
        const double diff = ai[l] - bj[l];
        acc += diff * diff;
      }
      out.at2(i, j) = acc;
    }
  }
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.parent_b = b;
  n.needs_grad = tracked(a) || tracked(b);
  n.backward = [a, b, m, nn, d](Tape& t, const Tensor& og) {
    const Tensor& av2 = t.value(a);
    const Tensor& bv2 = t.value(b);
    const bool ta = t.tracked(a), tb = t.tracked(b);
    Tensor da = ta ? Tensor::zeros({m, d}) : Tensor{};
    Tensor db = tb ? Tensor::zeros({nn, d}) : Tensor{};
    for (std::int64_t i = 0; i < m; ++i) {
      const double* ai = av2.data() + i * d;
      for (std::int64_t j = 0; j < nn; ++j) {
        const double g2 = 2.0 * og.at2(i, j);
        if (g2 == 0.0) continue;
        const double* bj = bv2.data() + j * d;
        for (std::int64_t l = 0; l < d; ++l) {
          const double diff = ai[l] - bj[l];
          if (ta) da.at2(i, l) += g2 * diff;
          if (tb) db.at2(j, l) -= g2 * diff;
        }
      }
    }
    if (ta) t.accumulate(a, da);
    if (tb) t.accumulate(b, db);
  };
  return push(std::move(n));
}

Tape::Id Tape::pairwise_dist(Id a, Id b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  check_pairwise(av, bv, "pairwise_dist");
  const std::int64_t m = av.rows(), nn = bv.rows(), d = av.cols();
  Tensor out = Tensor::zeros({m, nn});
  for (std::int64_t i = 0; i < m; ++i) {
    const double* ai = av.data() + i * d;
    for (std::int64_t j = 0; j < nn; ++j) {
      const double* bj = bv.data() + j * d;
      double acc = 0.0;
      for (std::int64_t l = 0; l < d; ++l) {
        const double diff = ai[l] - bj[l];
        acc += diff * diff;
      }
      out.at2(i, j) = std::sqrt(acc);
    }
  }
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.parent_b = b;
  n.needs_grad = tracked(a) || tracked(b);
  const Id self_hint = static_cast<Id>(nodes_.size());
  n.backward = [a, b, m, nn, d, self_hint](Tape& t, const Tensor& og) {
    const Tensor& av2 = t.value(a);
    const Tensor& bv2 = t.value(b);
    const Tensor& dist = t.value(self_hint);
    const bool ta = t.tracked(a), tb = t.tracked(b);
    Tensor da = ta ? Tensor::zeros({m, d}) : Tensor{};
    Tensor db = tb ? Tensor::zeros({nn, d}) : Tensor{};
    for (std::int64_t i = 0; i < m; ++i) {
      const double* ai = av2.data() + i * d;
      for (std::int64_t j = 0; j < nn; ++j) {
        const double dij = dist.at2(i, j);
        if (dij <= 0.0) continue;  // gradient defined as 0 at coincident points
        const double g = og.at2(i, j) / dij;
        if (g == 0.0) continue;
        const double* bj = bv2.data() + j * d;
        for (std::int64_t l = 0; l < d; ++l) {
          const double diff = ai[l] - bj[l];
          if (ta) da.at2(i, l) += g * diff;
          if (tb) db.at2(j, l) -= g * diff;
        }
      }
    }
    if (ta) t.accumulate(a, da);
    if (tb) t.accumulate(b, db);
  };
  return push(std::move(n));
}

namespace {

// Row logsumexp of one row of length n.
double lse_row(const double* row, std::int64_t n) {
  double mx = row[0];
  for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double acc = 0.0;
  for (std::int64_t j = 0; j < n; ++j) acc += std::exp(row[j] - mx);
  return mx + std::log(acc);
}

}  // namespace

Tape::Id Tape::logsumexp_rows(Id a) {
  const Tensor& av = value(a);
  if (av.rank() != 2) throw std::invalid_argument("logsumexp_rows: expected rank-2 input");
  const std::int64_t m = av.rows(), ncols = av.cols();
  Tensor out = Tensor::zeros({m});
  for (std::int64_t i = 0; i < m; ++i) out[i] = lse_row(av.data() + i * ncols, ncols);
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  const Id self_hint = static_cast<Id>(nodes_.size());
  n.backward = [a, m, ncols, self_hint](Tape& t, const Tensor& og) {
    const Tensor& av2 = t.value(a);
    const Tensor& lse = t.value(self_hint);
    Tensor da = Tensor::zeros({m, ncols});
    for (std::int64_t i = 0; i < m; ++i) {
      const double* row = av2.data() + i * ncols;
      double* drow = da.data() + i * ncols;
      const double gi = og[i];
      for (std::int64_t j = 0; j < ncols; ++j) drow[j] = gi * std::exp(row[j] - lse[i]);
    }
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

Tape::Id Tape::logsumexp_cols(Id a) {
  const Tensor& av = value(a);
  if (av.rank() != 2) throw std::invalid_argument("logsumexp_cols: expected rank-2 input");
  const std::int64_t m = av.rows(), ncols = av.cols();
  Tensor out = Tensor::zeros({ncols});
  for (std::int64_t j = 0; j < ncols; ++j) {
    double mx = av.at2(0, j);
    for (std::int64_t i = 1; i < m; ++i) mx = std::max(mx, av.at2(i, j));
    double acc = 0.0;
    for (std::int64_t i = 0; i < m; ++i) acc += std::exp(av.at2(i, j) - mx);
    out[j] = mx + std::log(acc);
  }
  Node n;
  n.value = std::move(out);
  n.parent_a = a;
  n.needs_grad = tracked(a);
  const Id self_hint = static_cast<Id>(nodes_.size());
  n.backward = [a, m, ncols, self_hint](Tape& t, const Tensor& og) {
    const Tensor& av2 = t.value(a);
    const Tensor& lse = t.value(self_hint);
    Tensor da = Tensor::zeros({m, ncols});
    for (std::int64_t i = 0; i < m; ++i) {
      for (std::int64_t j = 0; j < ncols; ++j) {
        da.at2(i, j) = og[j] * std::exp(av2.at2(i, j) - lse[j]);
      }
    }
    t.accumulate(a, da);
  };
  return push(std::move(n));
}

}  // namespace enslat
