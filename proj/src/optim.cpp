#include "enslat/optim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace enslat {

void AdamW::step(std::span<Tensor*> params, std::span<const Tensor*> grads) {
  if (params.size() != grads.size()) {
    throw std::invalid_argument("AdamW::step: params/grads count mismatch");
  }
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Tensor* p : params) {
      m_.push_back(Tensor::zeros(p->shape()));
      v_.push_back(Tensor::zeros(p->shape()));
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("AdamW::step: parameter count changed across steps");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!params[k]->same_shape(*grads[k])) {
      throw std::invalid_argument("AdamW::step: grad shape mismatch at parameter " +
                                  std::to_string(k));
    }
    if (!grads[k]->all_finite()) {
      throw std::runtime_error("AdamW::step: non-finite gradient at parameter " +
                               std::to_string(k) + "; step aborted");
    }
  }

  step_ += 1;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));

  for (std::size_t k = 0; k < params.size(); ++k) {
    double* p = params[k]->data();
    const double* g = grads[k]->data();
    double* m = m_[k].data();
    double* v = v_[k].data();
    const std::int64_t n = params[k]->numel();
    for (std::int64_t i = 0; i < n; ++i) {
      // Decoupled decay first, then the Adam update.
      p[i] -= cfg_.lr * cfg_.weight_decay * p[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
    }
  }
}

double lr_schedule(const LrScheduleConfig& cfg, std::span<const double> val_history) {
  double lr = cfg.initial_lr;
  double best = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  for (double v : val_history) {
    if (v < best) {
      best = v;
      since_improvement = 0;
    } else {
      ++since_improvement;
      if (since_improvement >= cfg.plateau_patience) {
        lr = std::max(lr * cfg.factor, cfg.min_lr);
        since_improvement = 0;
      }
    }
  }
  return lr;
}

}  // namespace enslat
