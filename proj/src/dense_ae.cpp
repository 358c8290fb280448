#include "enslat/dense_ae.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "enslat/linalg.hpp"
#include "enslat/tape.hpp"

namespace enslat::ae {

double kaiming_uniform_bound(std::int64_t fan_in, double slope) {
  return std::sqrt(6.0 / ((1.0 + slope * slope) * static_cast<double>(fan_in)));
}

Tensor kaiming_uniform(std::int64_t fan_in, std::int64_t fan_out, double slope, Rng& stream) {
  const double bound = kaiming_uniform_bound(fan_in, slope);
  Tensor w = Tensor::zeros({fan_in, fan_out});
  for (double& x : w.values()) x = (2.0 * stream.uniform01() - 1.0) * bound;
  return w;
}

AeModel AeModel::init(const AeConfig& cfg, std::uint64_t seed) {
  if (cfg.d_data < 1 || cfg.d_latent < 1 || cfg.width < 1) {
    throw std::invalid_argument("AeModel::init: dimensions must be >= 1");
  }
  const Rng root(seed);
  AeModel m;
  m.cfg = cfg;
  Rng s0 = root.fork(0), s1 = root.fork(1), s2 = root.fork(2), s3 = root.fork(3);
  m.enc_w1 = kaiming_uniform(cfg.d_data, cfg.width, cfg.slope, s0);
  m.enc_b1 = Tensor::zeros({cfg.width});
  m.enc_w2 = kaiming_uniform(cfg.width, cfg.d_latent, cfg.slope, s1);
  m.enc_b2 = Tensor::zeros({cfg.d_latent});
  m.dec_w1 = kaiming_uniform(cfg.d_latent, cfg.width, cfg.slope, s2);
  m.dec_b1 = Tensor::zeros({cfg.width});
  m.dec_w2 = kaiming_uniform(cfg.width, cfg.d_data, cfg.slope, s3);
  m.dec_b2 = Tensor::zeros({cfg.d_data});
  return m;
}

namespace {

Tensor dense(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor out = matmul(x, w);
  if (out.rank() == 1) {
    for (std::int64_t j = 0; j < out.dim(0); ++j) out[j] += b[j];
    return out;
  }
  for (std::int64_t i = 0; i < out.rows(); ++i) {
    for (std::int64_t j = 0; j < out.cols(); ++j) out.at2(i, j) += b[j];
  }
  return out;
}

void leaky_relu_inplace(Tensor& x, double slope) {
  for (double& v : x.values()) v = v > 0.0 ? v : slope * v;
}

}  // namespace

Tensor AeModel::encode(const Tensor& fields) const {
  Tensor h = dense(fields, enc_w1, enc_b1);
  leaky_relu_inplace(h, cfg.slope);
  return dense(h, enc_w2, enc_b2);
}

Tensor AeModel::decode(const Tensor& codes) const {
  Tensor h = dense(codes, dec_w1, dec_b1);
  leaky_relu_inplace(h, cfg.slope);
  return dense(h, dec_w2, dec_b2);
}

std::vector<Tensor*> AeModel::weights() {
  return {&enc_w1, &enc_b1, &enc_w2, &enc_b2, &dec_w1, &dec_b1, &dec_w2, &dec_b2};
}

std::vector<const Tensor*> AeModel::weights() const {
  return {&enc_w1, &enc_b1, &enc_w2, &enc_b2, &dec_w1, &dec_b1, &dec_w2, &dec_b2};
}

double validation_mae(const AeModel& model, const Tensor& rows) {
  const Tensor recon = model.decode(model.encode(rows));
  std::vector<double> terms(static_cast<std::size_t>(rows.numel()));
  for (std::int64_t i = 0; i < rows.numel(); ++i) terms[static_cast<std::size_t>(i)] = std::fabs(recon[i] - rows[i]);
  return exact_mean(terms);
}

namespace {

Tensor gather_rows(const Tensor& rows, std::span<const std::int64_t> idx) {
  const std::int64_t d = rows.cols();
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(idx.size()), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    for (std::int64_t j = 0; j < d; ++j) out.at2(static_cast<std::int64_t>(r), j) = rows.at2(idx[r], j);
  }
  return out;
}

}  // namespace

TrainResult train(AeModel& model, const Tensor& train_rows, const Tensor& val_rows,
                  const TrainConfig& cfg) {
  if (train_rows.rank() != 2 || val_rows.rank() != 2 || train_rows.cols() != model.cfg.d_data) {
    throw std::invalid_argument("ae::train: expected {n, d_data} sample matrices");
  }
  if (cfg.batch_size < 1 || cfg.early_stop_patience < 1) {
    throw std::invalid_argument("ae::train: batch_size and patience must be >= 1");
  }

  const Rng root(cfg.seed);
  AdamW optimizer(cfg.opt);
  const std::int64_t n = train_rows.rows();

  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  std::vector<double> val_history;
  std::vector<Tensor> best_weights;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (std::int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_schedule(cfg.lr, val_history);
    optimizer.set_lr(lr);

    Rng shuffler = root.fork(1, static_cast<std::uint64_t>(epoch));
    shuffler.shuffle(order);

    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      const std::int64_t stop = std::min(n, start + cfg.batch_size);
      const Tensor batch = gather_rows(
          train_rows, std::span<const std::int64_t>(order.data() + start,
                                                    static_cast<std::size_t>(stop - start)));

      Tape tape;
      std::vector<Tensor*> weights = model.weights();
      std::vector<Tape::Id> pids;
      pids.reserve(weights.size());
      for (Tensor* w : weights) pids.push_back(tape.param(*w));

      const Tape::Id input = tape.constant(batch);
      Tape::Id h = tape.leaky_relu(tape.add_rowvec(tape.matmul(input, pids[0]), pids[1]),
                                   model.cfg.slope);
      Tape::Id code = tape.add_rowvec(tape.matmul(h, pids[2]), pids[3]);
      Tape::Id hd = tape.leaky_relu(tape.add_rowvec(tape.matmul(code, pids[4]), pids[5]),
                                    model.cfg.slope);
      Tape::Id recon = tape.add_rowvec(tape.matmul(hd, pids[6]), pids[7]);
      Tape::Id loss = tape.mean(tape.abs(tape.sub(recon, input)));

      const double batch_loss = tape.value(loss).item();
      if (!std::isfinite(batch_loss)) {
        throw std::runtime_error("ae::train: non-finite loss at epoch " + std::to_string(epoch));
      }
      loss_sum += batch_loss * static_cast<double>(stop - start);
      loss_count += stop - start;

      tape.backward(loss);
      std::vector<const Tensor*> grads;
      grads.reserve(pids.size());
      for (Tape::Id pid : pids) grads.push_back(&tape.grad(pid));
      optimizer.step(weights, grads);
    }

    const double val = validation_mae(model, val_rows);
    val_history.push_back(val);

    if (val < best_val) {
      best_val = val;
      result.best_epoch = epoch;
      since_best = 0;
      best_weights.clear();
      for (const Tensor* w : static_cast<const AeModel&>(model).weights()) best_weights.push_back(*w);
    } else {
      ++since_best;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(loss_count);
    rec.val_loss = val;
    rec.best_val = best_val;
    result.history.push_back(rec);

    if (since_best >= cfg.early_stop_patience) break;
  }

  if (!best_weights.empty()) {
    std::vector<Tensor*> weights = model.weights();
    for (std::size_t i = 0; i < weights.size(); ++i) *weights[i] = best_weights[i];
  }
  result.best_val = best_val;
  return result;
}

}  // namespace enslat::ae
