#pragma once

#include <cstdint>
#include <vector>

#include "enslat/dense_ae.hpp"
#include "enslat/fields.hpp"
#include "enslat/rng.hpp"
#include "enslat/tape.hpp"
#include "enslat/tensor.hpp"

namespace enslat::ivae {

struct IvaeConfig {
  std::int64_t d_data = 0;
  std::int64_t d_latent = 0;
  std::int64_t width = 128;
  double slope = 0.01;
  double log_sigma_clamp = 10.0;  // log sigma kept in [-clamp, clamp]
};

// Permutation-invariant VAE: shared per-member encoder e1, mean pooling,
// e2 emitting (mu, log sigma), and a dense decoder. Pooling uses exact
// summation so the encoded distribution is bit-identical under member
// reordering (and under duplicating the whole ensemble).
struct IvaeModel {
  IvaeConfig cfg;
  Tensor e1_w, e1_b;      // d_data -> width
  Tensor e2_w1, e2_b1;    // width -> width
  Tensor e2_w2, e2_b2;    // width -> 2 * d_latent
  Tensor dec_w1, dec_b1;  // d_latent -> width
  Tensor dec_w2, dec_b2;  // width -> d_data

  static IvaeModel init(const IvaeConfig& cfg, std::uint64_t seed);

  void encode_ensemble(const Tensor& members, Tensor& mu, Tensor& sigma,
                       Tensor* log_sigma = nullptr) const;
  Tensor decode(const Tensor& z) const;  // {n, d_latent} -> {n, d_data}
  Tensor sample_and_decode(const Tensor& mu, const Tensor& sigma, std::int64_t n, Rng& rng) const;

  std::vector<Tensor*> weights();
  std::vector<const Tensor*> weights() const;
};

struct LossWeights {
  double w1 = 0.5;        // energy distance weight
  double w2 = 0.5;        // Sinkhorn distance weight
  double w3 = 0.01;       // KL weight
  double ed_scale = 2.0;  // fixed variable rescales
  double sd_scale = 0.02;
  double kl_scale = 0.1;
};

struct LossComponents {
  double total = 0.0;
  double ed = 0.0;  // raw energy distance, before weighting
  double sd = 0.0;  // raw Sinkhorn distance
  double kl = 0.0;  // raw KL divergence
};

struct SinkhornTrainConfig {
  int unrolled_iters = 50;
  double eps_factor = 0.05;  // times mean within-input squared distance
  double eps_floor = 1e-9;
};

// Regularization used for one day's Sinkhorn term. Derived from the input
// ensemble only, so it is constant with respect to model parameters and the
// unrolled gradient matches finite differences.
double train_epsilon(const Tensor& members, const SinkhornTrainConfig& cfg);

struct LossNodeIds {
  Tape::Id total, ed, sd, kl;
};

// The composite objective for a given (input, reconstruction, mu, sigma)
// tuple: w1 * ed_scale * ED + w2 * sd_scale * SD + w3 * kl_scale * KL, with
// the raw components reported alongside. Uses the same graph definition as
// training, so logged components and this function agree exactly.
LossComponents ivae_loss(const Tensor& input, const Tensor& recon, const Tensor& mu,
                         const Tensor& sigma, const Tensor& log_sigma, const LossWeights& weights,
                         double sinkhorn_epsilon, int sinkhorn_iters);

// Builds the full per-day loss graph (encode, reparameterized decode,
// weighted energy + Sinkhorn + KL per the iVAE objective). `noise` must be
// {n_samples, d_latent} and is treated as a constant.
LossNodeIds build_day_loss(Tape& tape, const std::vector<Tape::Id>& pids, const IvaeConfig& cfg,
                           const Tensor& members, const Tensor& noise, const LossWeights& weights,
                           const SinkhornTrainConfig& sinkhorn);

// Per-day ensembles of a day range as {M, d_data} matrices.
std::vector<Tensor> day_ensembles(const fields::EnsembleDataset& ds, std::int64_t begin,
                                  std::int64_t end);

struct IvaeTrainConfig {
  std::int64_t batch_ensembles = 8;
  std::int64_t max_epochs = 200;
  int early_stop_patience = 20;
  LrScheduleConfig lr;
  AdamWConfig opt;
  std::uint64_t seed = 0;
  SinkhornTrainConfig sinkhorn;
};

// Deterministic validation objective: one fixed noise draw per validation
// day (independent of epoch), same loss definition as training.
double validation_loss(const IvaeModel& model, const std::vector<Tensor>& val_days,
                       const LossWeights& weights, const IvaeTrainConfig& cfg,
                       LossComponents* components = nullptr);

// Mini-batch training over whole-day ensembles with AdamW, plateau LR decay
// and early stopping on the validation total loss.
ae::TrainResult train(IvaeModel& model, const std::vector<Tensor>& train_days,
                      const std::vector<Tensor>& val_days, const LossWeights& weights,
                      const IvaeTrainConfig& cfg);

}  // namespace enslat::ivae
