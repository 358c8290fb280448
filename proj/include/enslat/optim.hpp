#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "enslat/tensor.hpp"

namespace enslat {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

// AdamW with decoupled weight decay. Moments are kept per parameter in
// registration order; one state drives one model.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  double lr() const { return cfg_.lr; }
  std::int64_t step_count() const { return step_; }

  // Applies one update in place. Throws on a non-finite gradient so the
  // caller can abort with diagnostics instead of corrupting the weights.
  void step(std::span<Tensor*> params, std::span<const Tensor*> grads);

 private:
  AdamWConfig cfg_;
  std::int64_t step_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

struct LrScheduleConfig {
  double initial_lr = 1e-4;
  int plateau_patience = 5;
  double factor = 0.5;
  double min_lr = 1e-6;
};

// Reduce-on-plateau schedule: halves the rate after `plateau_patience`
// consecutive epochs without a new best validation loss, floored at
// min_lr. Pure function of the validation history seen so far.
double lr_schedule(const LrScheduleConfig& cfg, std::span<const double> val_history);

}  // namespace enslat
