#pragma once

#include <cstdint>
#include <vector>

#include "enslat/optim.hpp"
#include "enslat/rng.hpp"
#include "enslat/tensor.hpp"

namespace enslat::ae {

struct AeConfig {
  std::int64_t d_data = 0;
  std::int64_t d_latent = 0;
  std::int64_t width = 128;
  double slope = 0.01;  // LeakyReLU negative slope
};

// Fully connected autoencoder: d_data -> width -> d_latent and back, with a
// LeakyReLU on the hidden layers and linear outputs.
struct AeModel {
  AeConfig cfg;
  Tensor enc_w1, enc_b1, enc_w2, enc_b2;
  Tensor dec_w1, dec_b1, dec_w2, dec_b2;

  // Kaiming-uniform fan-in init scaled for the LeakyReLU slope; zero biases.
  static AeModel init(const AeConfig& cfg, std::uint64_t seed);

  Tensor encode(const Tensor& fields) const;  // {n, d_data} -> {n, d_latent}
  Tensor decode(const Tensor& codes) const;

  std::vector<Tensor*> weights();
  std::vector<const Tensor*> weights() const;
};

// Kaiming-uniform bound for one dense layer.
double kaiming_uniform_bound(std::int64_t fan_in, double slope);
Tensor kaiming_uniform(std::int64_t fan_in, std::int64_t fan_out, double slope, Rng& stream);

struct TrainConfig {
  std::int64_t batch_size = 1024;
  std::int64_t max_epochs = 200;
  int early_stop_patience = 20;
  LrScheduleConfig lr;
  AdamWConfig opt;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double best_val = 0.0;  // running minimum of val_loss
  // iVAE component logging; unused by the plain AE.
  double ed = 0.0, sd = 0.0, kl = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::int64_t best_epoch = -1;
  double best_val = 0.0;
};

// Mini-batch AdamW on the MAE between inputs and reconstructions; samples
// are reshuffled every epoch, early stopping restores the best-validation
// weights. Inputs are expected standardized.
TrainResult train(AeModel& model, const Tensor& train_rows, const Tensor& val_rows,
                  const TrainConfig& cfg);

// Plain forward validation MAE, the quantity tracked by early stopping.
double validation_mae(const AeModel& model, const Tensor& rows);

}  // namespace enslat::ae
