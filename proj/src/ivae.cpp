#include "enslat/ivae.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "enslat/linalg.hpp"
#include "enslat/metrics.hpp"

namespace enslat::ivae {

IvaeModel IvaeModel::init(const IvaeConfig& cfg, std::uint64_t seed) {
  if (cfg.d_data < 1 || cfg.d_latent < 1 || cfg.width < 1) {
    throw std::invalid_argument("IvaeModel::init: dimensions must be >= 1");
  }
  const Rng root(seed);
  IvaeModel m;
  m.cfg = cfg;
  Rng s0 = root.fork(0), s1 = root.fork(1), s2 = root.fork(2), s3 = root.fork(3), s4 = root.fork(4);
  m.e1_w = ae::kaiming_uniform(cfg.d_data, cfg.width, cfg.slope, s0);
  m.e1_b = Tensor::zeros({cfg.width});
  m.e2_w1 = ae::kaiming_uniform(cfg.width, cfg.width, cfg.slope, s1);
  m.e2_b1 = Tensor::zeros({cfg.width});
  m.e2_w2 = ae::kaiming_uniform(cfg.width, 2 * cfg.d_latent, cfg.slope, s2);
  m.e2_b2 = Tensor::zeros({2 * cfg.d_latent});
  m.dec_w1 = ae::kaiming_uniform(cfg.d_latent, cfg.width, cfg.slope, s3);
  m.dec_b1 = Tensor::zeros({cfg.width});
  m.dec_w2 = ae::kaiming_uniform(cfg.width, cfg.d_data, cfg.slope, s4);
  m.dec_b2 = Tensor::zeros({cfg.d_data});
  return m;
}

std::vector<Tensor*> IvaeModel::weights() {
  return {&e1_w, &e1_b, &e2_w1, &e2_b1, &e2_w2, &e2_b2, &dec_w1, &dec_b1, &dec_w2, &dec_b2};
}

std::vector<const Tensor*> IvaeModel::weights() const {
  return {&e1_w, &e1_b, &e2_w1, &e2_b1, &e2_w2, &e2_b2, &dec_w1, &dec_b1, &dec_w2, &dec_b2};
}

namespace {

Tensor dense_rows(const Tensor& x, const Tensor& w, const Tensor& b, double slope, bool activate) {
  Tensor out = matmul(x, w);
  if (out.rank() == 1) {
    for (std::int64_t j = 0; j < out.dim(0); ++j) {
      out[j] += b[j];
      if (activate && out[j] < 0.0) out[j] *= slope;
    }
    return out;
  }
  for (std::int64_t i = 0; i < out.rows(); ++i) {
    for (std::int64_t j = 0; j < out.cols(); ++j) {
      double& v = out.at2(i, j);
      v += b[j];
      if (activate && v < 0.0) v *= slope;
    }
  }
  return out;
}

}  // namespace

void IvaeModel::encode_ensemble(const Tensor& members, Tensor& mu, Tensor& sigma,
                                Tensor* log_sigma) const {
  if (members.rank() != 2 || members.cols() != cfg.d_data || members.rows() < 1) {
    throw std::invalid_argument("encode_ensemble: expected {M, d_data} with M >= 1");
  }
  const Tensor y = dense_rows(members, e1_w, e1_b, cfg.slope, true);

  // Exact column means: the pooled vector is bitwise independent of member
  // order, which carries through e2 to (mu, sigma).
  const std::int64_t m = y.rows();
  Tensor pooled = Tensor::zeros({cfg.width});
  std::vector<double> col(static_cast<std::size_t>(m));
  for (std::int64_t j = 0; j < cfg.width; ++j) {
    for (std::int64_t i = 0; i < m; ++i) col[static_cast<std::size_t>(i)] = y.at2(i, j);
    pooled[j] = exact_mean(col);
  }

  const Tensor h = dense_rows(pooled, e2_w1, e2_b1, cfg.slope, true);
  const Tensor out = dense_rows(h, e2_w2, e2_b2, cfg.slope, false);

  mu = Tensor::zeros({cfg.d_latent});
  sigma = Tensor::zeros({cfg.d_latent});
  if (log_sigma) *log_sigma = Tensor::zeros({cfg.d_latent});
  for (std::int64_t k = 0; k < cfg.d_latent; ++k) {
    mu[k] = out[k];
    const double ls =
        std::min(std::max(out[cfg.d_latent + k], -cfg.log_sigma_clamp), cfg.log_sigma_clamp);
    sigma[k] = std::exp(ls);
    if (log_sigma) (*log_sigma)[k] = ls;
  }
}

Tensor IvaeModel::decode(const Tensor& z) const {
  const Tensor h = dense_rows(z, dec_w1, dec_b1, cfg.slope, true);
  return dense_rows(h, dec_w2, dec_b2, cfg.slope, false);
}

Tensor IvaeModel::sample_and_decode(const Tensor& mu, const Tensor& sigma, std::int64_t n,
                                    Rng& rng) const {
  Tensor z = Tensor::zeros({n, cfg.d_latent});
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t k = 0; k < cfg.d_latent; ++k) {
      z.at2(i, k) = mu[k] + sigma[k] * rng.normal();
    }
  }
  return decode(z);
}

double train_epsilon(const Tensor& members, const SinkhornTrainConfig& cfg) {
  const std::int64_t m = members.rows(), d = members.cols();
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(m * m));
  for (std::int64_t i = 0; i < m; ++i) {
    const double* xi = members.data() + i * d;
    for (std::int64_t j = 0; j < m; ++j) {
      const double* xj = members.data() + j * d;
      double acc = 0.0;
      for (std::int64_t l = 0; l < d; ++l) {
        const double diff = xi[l] - xj[l];
        acc += diff * diff;
      }
      terms.push_back(acc);
    }
  }
  return std::max(cfg.eps_factor * exact_mean(terms), cfg.eps_floor);
}

LossComponents ivae_loss(const Tensor& input, const Tensor& recon, const Tensor& mu,
                         const Tensor& sigma, const Tensor& log_sigma, const LossWeights& weights,
                         double sinkhorn_epsilon, int sinkhorn_iters) {
  Tape tape;
  const Tape::Id x = tape.constant(input);
  const Tape::Id xt = tape.constant(recon);
  const Tape::Id ed = metrics::energy_distance_multi_node(tape, x, xt);
  const Tape::Id sd = metrics::sinkhorn_distance_node(tape, x, xt, sinkhorn_epsilon, sinkhorn_iters);
  const Tape::Id kl = metrics::kl_std_normal_node(tape, tape.constant(mu), tape.constant(sigma),
                                                  tape.constant(log_sigma));
  const Tape::Id total = tape.add(
      tape.add(tape.scale(ed, weights.w1 * weights.ed_scale),
               tape.scale(sd, weights.w2 * weights.sd_scale)),
      tape.scale(kl, weights.w3 * weights.kl_scale));
  LossComponents out;
  out.total = tape.value(total).item();
  out.ed = tape.value(ed).item();
  out.sd = tape.value(sd).item();
  out.kl = tape.value(kl).item();
  if (!std::isfinite(out.total)) throw std::runtime_error("ivae_loss: non-finite component");
  return out;
}

LossNodeIds build_day_loss(Tape& tape, const std::vector<Tape::Id>& pids, const IvaeConfig& cfg,
                           const Tensor& members, const Tensor& noise, const LossWeights& weights,
                           const SinkhornTrainConfig& sinkhorn) {
  if (pids.size() != 10) throw std::invalid_argument("build_day_loss: expected 10 parameter ids");
  const std::int64_t n_samples = noise.rows();
  if (noise.cols() != cfg.d_latent) {
    throw std::invalid_argument("build_day_loss: noise must be {n, d_latent}");
  }

  const Tape::Id input = tape.constant(members);
  const Tape::Id eps_noise = tape.constant(noise);

  // Shared encoder: e1 per member, mean pooling, e2 -> (mu, log sigma).
  Tape::Id y = tape.leaky_relu(tape.add_rowvec(tape.matmul(input, pids[0]), pids[1]), cfg.slope);
  Tape::Id pooled = tape.mean_rows(y);
  Tape::Id h = tape.leaky_relu(tape.add(tape.matmul(pooled, pids[2]), pids[3]), cfg.slope);
  Tape::Id enc_out = tape.add(tape.matmul(h, pids[4]), pids[5]);
  Tape::Id mu = tape.slice_cols(enc_out, 0, cfg.d_latent);
  Tape::Id log_sigma =
      tape.clamp(tape.slice_cols(enc_out, cfg.d_latent, 2 * cfg.d_latent), -cfg.log_sigma_clamp,
                 cfg.log_sigma_clamp);
  Tape::Id sigma = tape.exp(log_sigma);

  // Reparameterized samples and decoder.
  Tape::Id z = tape.add(tape.broadcast_rows(mu, n_samples),
                        tape.mul(tape.broadcast_rows(sigma, n_samples), eps_noise));
  Tape::Id hd = tape.leaky_relu(tape.add_rowvec(tape.matmul(z, pids[6]), pids[7]), cfg.slope);
  Tape::Id recon = tape.add_rowvec(tape.matmul(hd, pids[8]), pids[9]);

  const Tape::Id ed = metrics::energy_distance_multi_node(tape, input, recon);
  const double eps = train_epsilon(members, sinkhorn);
  const Tape::Id sd =
      metrics::sinkhorn_distance_node(tape, input, recon, eps, sinkhorn.unrolled_iters);
  const Tape::Id kl = metrics::kl_std_normal_node(tape, mu, sigma, log_sigma);

  const Tape::Id total = tape.add(
      tape.add(tape.scale(ed, weights.w1 * weights.ed_scale),
               tape.scale(sd, weights.w2 * weights.sd_scale)),
      tape.scale(kl, weights.w3 * weights.kl_scale));
  return {total, ed, sd, kl};
}

std::vector<Tensor> day_ensembles(const fields::EnsembleDataset& ds, std::int64_t begin,
                                  std::int64_t end) {
  std::vector<Tensor> days;
  days.reserve(static_cast<std::size_t>(end - begin));
  for (std::int64_t t = begin; t < end; ++t) days.push_back(ds.day_members(t));
  return days;
}

namespace {

constexpr std::uint64_t kStreamTrainNoise = 11;
constexpr std::uint64_t kStreamValNoise = 12;
constexpr std::uint64_t kStreamShuffle = 13;

Tensor noise_for(const Rng& root, std::uint64_t stream, std::uint64_t key, std::int64_t n,
                 std::int64_t d) {
  Rng r = root.fork(stream, key);
  Tensor out = Tensor::zeros({n, d});
  for (double& x : out.values()) x = r.normal();
  return out;
}

}  // namespace

double validation_loss(const IvaeModel& model, const std::vector<Tensor>& val_days,
                       const LossWeights& weights, const IvaeTrainConfig& cfg,
                       LossComponents* components) {
  if (val_days.empty()) throw std::invalid_argument("ivae::validation_loss: no validation days");
  const Rng root(cfg.seed);
  double total = 0.0, ed = 0.0, sd = 0.0, kl = 0.0;
  for (std::size_t d = 0; d < val_days.size(); ++d) {
    const Tensor& members = val_days[d];
    const Tensor noise =
        noise_for(root, kStreamValNoise, d, members.rows(), model.cfg.d_latent);
    Tape tape;
    std::vector<Tape::Id> pids;
    for (const Tensor* w : model.weights()) pids.push_back(tape.constant(*w));
    // Constants suffice: no backward pass here, ids line up with build_day_loss.
    LossNodeIds ids = build_day_loss(tape, pids, model.cfg, members, noise, weights, cfg.sinkhorn);
    total += tape.value(ids.total).item();
    ed += tape.value(ids.ed).item();
    sd += tape.value(ids.sd).item();
    kl += tape.value(ids.kl).item();
  }
  const double inv = 1.0 / static_cast<double>(val_days.size());
  if (components) *components = {total * inv, ed * inv, sd * inv, kl * inv};
  return total * inv;
}

ae::TrainResult train(IvaeModel& model, const std::vector<Tensor>& train_days,
                      const std::vector<Tensor>& val_days, const LossWeights& weights,
                      const IvaeTrainConfig& cfg) {
  if (train_days.empty() || val_days.empty()) {
    throw std::invalid_argument("ivae::train: empty train or validation day list");
  }
  if (cfg.batch_ensembles < 1 || cfg.early_stop_patience < 1) {
    throw std::invalid_argument("ivae::train: batch_ensembles and patience must be >= 1");
  }

  const Rng root(cfg.seed);
  AdamW optimizer(cfg.opt);
  const std::int64_t n_days = static_cast<std::int64_t>(train_days.size());

  std::vector<std::int64_t> order(static_cast<std::size_t>(n_days));
  std::iota(order.begin(), order.end(), 0);

  ae::TrainResult result;
  std::vector<double> val_history;
  std::vector<Tensor> best_weights;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;

  for (std::int64_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = lr_schedule(cfg.lr, val_history);
    optimizer.set_lr(lr);

    Rng shuffler = root.fork(kStreamShuffle, static_cast<std::uint64_t>(epoch));
    shuffler.shuffle(order);

    double ep_total = 0.0, ep_ed = 0.0, ep_sd = 0.0, ep_kl = 0.0;
    std::int64_t ep_days = 0;

    for (std::int64_t start = 0; start < n_days; start += cfg.batch_ensembles) {
      const std::int64_t stop = std::min(n_days, start + cfg.batch_ensembles);

      Tape tape;
      std::vector<Tensor*> wts = model.weights();
      std::vector<Tape::Id> pids;
      pids.reserve(wts.size());
      for (Tensor* w : wts) pids.push_back(tape.param(*w));

      std::vector<Tape::Id> day_losses;
      for (std::int64_t b = start; b < stop; ++b) {
        const std::int64_t day = order[static_cast<std::size_t>(b)];
        const Tensor& members = train_days[static_cast<std::size_t>(day)];
        const Tensor noise = noise_for(
            root, kStreamTrainNoise,
            static_cast<std::uint64_t>(epoch) * static_cast<std::uint64_t>(n_days) +
                static_cast<std::uint64_t>(day),
            members.rows(), model.cfg.d_latent);
        LossNodeIds ids =
            build_day_loss(tape, pids, model.cfg, members, noise, weights, cfg.sinkhorn);
        day_losses.push_back(ids.total);
        ep_total += tape.value(ids.total).item();
        ep_ed += tape.value(ids.ed).item();
        ep_sd += tape.value(ids.sd).item();
        ep_kl += tape.value(ids.kl).item();
        ++ep_days;
      }

      Tape::Id batch_loss = day_losses[0];
      for (std::size_t i = 1; i < day_losses.size(); ++i) {
        batch_loss = tape.add(batch_loss, day_losses[i]);
      }
      batch_loss = tape.scale(batch_loss, 1.0 / static_cast<double>(day_losses.size()));

      const double value = tape.value(batch_loss).item();
      if (!std::isfinite(value)) {
        throw std::runtime_error(
            "ivae::train: non-finite loss at epoch " + std::to_string(epoch) +
            " (ed=" + std::to_string(ep_ed) + " sd=" + std::to_string(ep_sd) +
            " kl=" + std::to_string(ep_kl) + ")");
      }

      tape.backward(batch_loss);
      std::vector<const Tensor*> grads;
      grads.reserve(pids.size());
      for (Tape::Id pid : pids) grads.push_back(&tape.grad(pid));
      optimizer.step(wts, grads);
    }

    const double val = validation_loss(model, val_days, weights, cfg);
    val_history.push_back(val);

    if (val < best_val) {
      best_val = val;
      result.best_epoch = epoch;
      since_best = 0;
      best_weights.clear();
      for (const Tensor* w : static_cast<const IvaeModel&>(model).weights()) {
        best_weights.push_back(*w);
      }
    } else {
      ++since_best;
    }

    ae::EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    const double inv = 1.0 / static_cast<double>(ep_days);
    rec.train_loss = ep_total * inv;
    rec.val_loss = val;
    rec.best_val = best_val;
    rec.ed = ep_ed * inv;
    rec.sd = ep_sd * inv;
    rec.kl = ep_kl * inv;
    result.history.push_back(rec);

    if (since_best >= cfg.early_stop_patience) break;
  }

  if (!best_weights.empty()) {
    std::vector<Tensor*> wts = model.weights();
    for (std::size_t i = 0; i < wts.size(); ++i) *wts[i] = best_weights[i];
  }
  result.best_val = best_val;
  return result;
}

}  // namespace enslat::ivae
