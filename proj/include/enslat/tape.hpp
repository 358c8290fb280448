#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "enslat/tensor.hpp"

namespace enslat {

// Reverse-mode gradient tape over a fixed primitive set. A tape records one
// forward computation; backward() then fills a gradient for every node that
// influences the loss, including all registered parameters.
//
// Usage is define-by-run: register parameters and constants, compose
// primitives, call backward(loss) once, read grad(id). Ids are only valid
// for the tape that produced them.
class Tape {
 public:
  using Id = std::int32_t;

  // Leaf that requires no gradient (inputs, frozen noise, targets).
  Id constant(Tensor value);

  // Leaf registered as a trainable parameter; backward() always populates
  // its gradient (zeros when the loss does not depend on it).
  Id param(Tensor value);

  const std::vector<Id>& params() const { return params_; }
  const Tensor& value(Id id) const { return node(id).value; }
  const Tensor& grad(Id id) const;

  // Reverse pass from a scalar loss. May be called once per tape.
  void backward(Id loss);

  // --- primitives ---------------------------------------------------------
  Id matmul(Id a, Id b);                    // {m,k}x{k,n}; rank-1 lhs = row vector
  Id add(Id a, Id b);                       // same shape
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);                       // elementwise
  Id scale(Id a, double c);
  Id add_scalar(Id a, double c);
  Id add_rowvec(Id a, Id v);                // a {m,n} + v {n} broadcast over rows
  Id add_colvec(Id a, Id v);                // a {m,n} + v {m} broadcast over columns
  Id broadcast_rows(Id v, std::int64_t m);  // v {n} -> {m,n}
  Id leaky_relu(Id a, double slope);
  Id exp(Id a);
  Id log(Id a);
  Id sqrt_clamped(Id a);                    // sqrt(max(x,0)); gradient 0 at x <= 0
  Id abs(Id a);                             // subgradient 0 at x == 0
  Id clamp(Id a, double lo, double hi);
  Id sum(Id a);                             // -> scalar
  Id mean(Id a);                            // -> scalar
  Id mean_rows(Id a);                       // {m,n} -> {n}
  Id slice_cols(Id a, std::int64_t c0, std::int64_t c1);  // rank 1 or 2
  Id pairwise_sqdist(Id a, Id b);           // {m,d},{n,d} -> {m,n} squared distances
  Id pairwise_dist(Id a, Id b);             // Euclidean; gradient 0 at coincident rows
  Id logsumexp_rows(Id a);                  // {m,n} -> {m}
  Id logsumexp_cols(Id a);                  // {m,n} -> {n}

 private:
  struct Node {
    Tensor value;
    Id parent_a = -1;
    Id parent_b = -1;
    bool needs_grad = false;
    // Accumulates parent gradients given this node's gradient.
    std::function<void(Tape&, const Tensor& out_grad)> backward;
  };

  const Node& node(Id id) const;
  Node& node(Id id);
  Id push(Node n);
  void accumulate(Id target, const Tensor& g);
  bool tracked(Id id) const { return node(id).needs_grad; }

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<Id> params_;
  bool ran_backward_ = false;
};

}  // namespace enslat
