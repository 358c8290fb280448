#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "enslat/ivae.hpp"
#include "enslat/metrics.hpp"
#include "enslat/synthgen.hpp"
#include "oracles.hpp"

using namespace enslat;
using namespace enslat::ivae;

namespace {

IvaeModel tiny_model(std::int64_t d_data = 8, std::int64_t d_latent = 2, std::int64_t width = 6,
                     std::uint64_t seed = 1) {
  return IvaeModel::init(IvaeConfig{d_data, d_latent, width, 0.01, 10.0}, seed);
}

Tensor permuted(const Tensor& t, Rng& rng) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(t.rows()));
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<std::int64_t>(i);
  rng.shuffle(perm);
  Tensor out = Tensor::zeros(t.shape());
  for (std::int64_t i = 0; i < t.rows(); ++i) {
    for (std::int64_t j = 0; j < t.cols(); ++j) {
      out.at2(i, j) = t.at2(perm[static_cast<std::size_t>(i)], j);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("encode_ensemble is bit-identical under 100 random member permutations") {
  const IvaeModel model = tiny_model();
  Rng rng(2);
  const Tensor members = oracles::random_tensor({9, 8}, rng);
  Tensor mu0, sigma0;
  model.encode_ensemble(members, mu0, sigma0);

  Rng prng(3);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor mu, sigma;
    model.encode_ensemble(permuted(members, prng), mu, sigma);
    for (std::int64_t k = 0; k < 2; ++k) {
      CHECK(mu[k] == mu0[k]);
      CHECK(sigma[k] == sigma0[k]);
    }
  }
}

TEST_CASE("encode_ensemble: identical members behave like M = 1") {
  const IvaeModel model = tiny_model();
  Rng rng(4);
  const Tensor one = oracles::random_tensor({1, 8}, rng);
  Tensor stacked = Tensor::zeros({6, 8});
  for (std::int64_t i = 0; i < 6; ++i) {
    for (std::int64_t j = 0; j < 8; ++j) stacked.at2(i, j) = one.at2(0, j);
  }
  Tensor mu1, sigma1, mu6, sigma6;
  model.encode_ensemble(one, mu1, sigma1);
  model.encode_ensemble(stacked, mu6, sigma6);
  for (std::int64_t k = 0; k < 2; ++k) {
    CHECK(mu6[k] == mu1[k]);
    CHECK(sigma6[k] == sigma1[k]);
  }
}

TEST_CASE("encode_ensemble: duplicating the whole ensemble changes nothing") {
  const IvaeModel model = tiny_model();
  Rng rng(5);
  const Tensor members = oracles::random_tensor({7, 8}, rng);
  Tensor doubled = Tensor::zeros({14, 8});
  for (std::int64_t i = 0; i < 7; ++i) {
    for (std::int64_t j = 0; j < 8; ++j) {
      doubled.at2(i, j) = members.at2(i, j);
      doubled.at2(i + 7, j) = members.at2(i, j);
    }
  }
  Tensor mu_a, sg_a, mu_b, sg_b;
  model.encode_ensemble(members, mu_a, sg_a);
  model.encode_ensemble(doubled, mu_b, sg_b);
  for (std::int64_t k = 0; k < 2; ++k) {
    CHECK(mu_b[k] == mu_a[k]);
    CHECK(sg_b[k] == sg_a[k]);
  }
}

TEST_CASE("sample_and_decode: tiny sigma collapses to decode(mu), N is free") {
  const IvaeModel model = tiny_model();
  const Tensor mu({2}, {0.4, -0.9});
  const Tensor sigma({2}, {std::exp(-10.0), std::exp(-10.0)});  // clamp floor
  Rng rng(6);
  const Tensor out = model.sample_and_decode(mu, sigma, 7, rng);
  CHECK(out.rows() == 7);
  CHECK(out.cols() == 8);

  Tensor mu_row = Tensor::zeros({1, 2});
  mu_row.at2(0, 0) = mu[0];
  mu_row.at2(0, 1) = mu[1];
  const Tensor ref = model.decode(mu_row);
  for (std::int64_t i = 0; i < 7; ++i) {
    for (std::int64_t j = 0; j < 8; ++j) {
      CHECK(std::fabs(out.at2(i, j) - ref.at2(0, j)) < 1e-3);
    }
  }
}

TEST_CASE("decode gradient w.r.t. mu matches finite differences under frozen noise") {
  const IvaeModel model = tiny_model();
  Rng rng(7);
  const Tensor noise = oracles::random_tensor({5, 2}, rng);
  const Tensor mu0({2}, {0.3, -0.2});
  const Tensor logsig0({2}, {-0.5, 0.1});

  auto value_of = [&](const Tensor& mu_in) {
    Tensor z = Tensor::zeros({5, 2});
    for (std::int64_t i = 0; i < 5; ++i) {
      for (std::int64_t k = 0; k < 2; ++k) {
        z.at2(i, k) = mu_in[k] + std::exp(logsig0[k]) * noise.at2(i, k);
      }
    }
    const Tensor out = model.decode(z);
    double acc = 0.0;
    for (double v : out.values()) acc += v * v;
    return acc / static_cast<double>(out.numel());
  };

  Tape tape;
  const Tape::Id mu = tape.param(mu0);
  const Tape::Id sigma = tape.constant(Tensor({2}, {std::exp(-0.5), std::exp(0.1)}));
  const Tape::Id z = tape.add(tape.broadcast_rows(mu, 5),
                              tape.mul(tape.broadcast_rows(sigma, 5), tape.constant(noise)));
  const Tape::Id h = tape.leaky_relu(
      tape.add_rowvec(tape.matmul(z, tape.constant(model.dec_w1)), tape.constant(model.dec_b1)),
      0.01);
  const Tape::Id out = tape.add_rowvec(tape.matmul(h, tape.constant(model.dec_w2)),
                                       tape.constant(model.dec_b2));
  tape.backward(tape.mean(tape.mul(out, out)));

  const double hstep = 1e-6;
  for (std::int64_t k = 0; k < 2; ++k) {
    Tensor plus = mu0, minus = mu0;
    plus[k] += hstep;
    minus[k] -= hstep;
    const double fd = (value_of(plus) - value_of(minus)) / (2.0 * hstep);
    CHECK(oracles::rel_err(tape.grad(mu)[k], fd) < 1e-5);
  }
}

TEST_CASE("ivae_loss: zero-distance and zero-KL degenerate cases") {
  Rng rng(8);
  const Tensor x = oracles::random_tensor({4, 6}, rng);
  const Tensor mu = Tensor::zeros({2});
  const Tensor sigma = Tensor::full({2}, 1.0);
  const Tensor log_sigma = Tensor::zeros({2});
  LossWeights w;  // 0.5 / 0.5 / 0.01 with ed_scale 2, kl_scale 0.1

  const LossComponents c = ivae_loss(x, x, mu, sigma, log_sigma, w, 0.5, 50);
  CHECK(c.ed == 0.0);
  CHECK(c.kl == 0.0);
  CHECK(c.sd >= 0.0);
  CHECK(c.total == w.w2 * w.sd_scale * c.sd);
}

TEST_CASE("ivae_loss: weights (1, 0, 0) reduce to 2 * energy distance") {
  Rng rng(9);
  const Tensor x = oracles::random_tensor({4, 6}, rng);
  const Tensor y = oracles::random_tensor({5, 6}, rng);
  LossWeights w;
  w.w1 = 1.0;
  w.w2 = 0.0;
  w.w3 = 0.0;
  const LossComponents c =
      ivae_loss(x, y, Tensor::zeros({2}), Tensor::full({2}, 1.0), Tensor::zeros({2}), w, 0.5, 50);
  CHECK(c.total == doctest::Approx(2.0 * c.ed).epsilon(1e-15));
  CHECK(c.ed == doctest::Approx(metrics::energy_distance_multi(x, y)).epsilon(1e-12));
}

TEST_CASE("ivae_loss: hand-built two-member 1-D case sums its components") {
  const Tensor x({2, 1}, {0.0, 2.0});
  const Tensor y({2, 1}, {1.0, 3.0});
  const Tensor mu({1}, {0.5});
  const Tensor log_sigma({1}, {-0.25});
  Tensor sigma = log_sigma;
  for (double& v : sigma.values()) v = std::exp(v);

  LossWeights w;
  w.sd_scale = 1.0 / 50.0;
  const double eps = 0.7;
  const LossComponents c = ivae_loss(x, y, mu, sigma, log_sigma, w, eps, 80);

  CHECK(c.ed == doctest::Approx(1.0).epsilon(1e-12));  // from the pairwise sums
  CHECK(c.kl == doctest::Approx(metrics::kl_std_normal(mu, sigma)).epsilon(1e-12));
  const double recombined = w.w1 * w.ed_scale * c.ed + w.w2 * w.sd_scale * c.sd +
                            w.w3 * w.kl_scale * c.kl;
  CHECK(c.total == doctest::Approx(recombined).epsilon(1e-12));
}

namespace {

std::vector<Tensor> synth_days(std::int64_t days, std::int64_t members, std::uint64_t seed) {
  synth::GrfConfig cfg;
  cfg.height = 4;
  cfg.width = 4;
  cfg.length_scale = 1.5;
  cfg.day_signal_std = 0.5;
  cfg.member_noise_std = 0.4;
  cfg.n_days = days;
  cfg.n_members = members;
  cfg.seed = seed;
  const fields::EnsembleDataset ds = synth::generate(cfg);
  return day_ensembles(ds, 0, days);
}

IvaeTrainConfig quick_train_config(std::int64_t epochs, std::uint64_t seed) {
  IvaeTrainConfig cfg;
  cfg.batch_ensembles = 4;
  cfg.max_epochs = epochs;
  cfg.early_stop_patience = 1000;
  cfg.lr.initial_lr = 3e-3;
  cfg.opt.lr = 3e-3;
  cfg.seed = seed;
  cfg.sinkhorn.unrolled_iters = 20;
  return cfg;
}

}  // namespace

TEST_CASE("training lowers the validation loss and restores the best checkpoint") {
  const std::vector<Tensor> train_days = synth_days(16, 6, 10);
  const std::vector<Tensor> val_days = synth_days(4, 6, 11);

  IvaeModel model = tiny_model(16, 2, 12, 12);
  LossWeights w;
  w.sd_scale = 0.2;
  const IvaeTrainConfig cfg = quick_train_config(25, 13);

  const double initial = validation_loss(model, val_days, w, cfg);
  const ae::TrainResult result = train(model, train_days, val_days, w, cfg);
  const double final_val = validation_loss(model, val_days, w, cfg);

  CHECK(final_val < initial);
  CHECK(result.history.size() <= 25);

  double min_val = 1e300;
  for (const auto& r : result.history) min_val = std::min(min_val, r.val_loss);
  CHECK(final_val == min_val);  // returned model is the best checkpoint
}

TEST_CASE("per-epoch logged components recombine to the total") {
  const std::vector<Tensor> train_days = synth_days(8, 5, 14);
  const std::vector<Tensor> val_days = synth_days(3, 5, 15);
  IvaeModel model = tiny_model(16, 2, 10, 16);
  LossWeights w;
  w.sd_scale = 0.15;
  const ae::TrainResult result = train(model, train_days, val_days, w, quick_train_config(5, 17));
  for (const auto& r : result.history) {
    const double recombined =
        w.w1 * w.ed_scale * r.ed + w.w2 * w.sd_scale * r.sd + w.w3 * w.kl_scale * r.kl;
    CHECK(std::fabs(r.train_loss - recombined) < 1e-12 * std::max(1.0, std::fabs(r.train_loss)));
  }
}

TEST_CASE("training is bit-reproducible under a fixed seed") {
  const std::vector<Tensor> train_days = synth_days(8, 5, 18);
  const std::vector<Tensor> val_days = synth_days(3, 5, 19);
  LossWeights w;
  w.sd_scale = 0.15;

  IvaeModel m1 = tiny_model(16, 2, 10, 20);
  IvaeModel m2 = tiny_model(16, 2, 10, 20);
  const ae::TrainResult r1 = train(m1, train_days, val_days, w, quick_train_config(6, 21));
  const ae::TrainResult r2 = train(m2, train_days, val_days, w, quick_train_config(6, 21));
  REQUIRE(r1.history.size() == r2.history.size());
  for (std::size_t i = 0; i < r1.history.size(); ++i) {
    CHECK(r1.history[i].train_loss == r2.history[i].train_loss);
    CHECK(r1.history[i].val_loss == r2.history[i].val_loss);
  }
  const auto w1 = m1.weights();
  const auto w2 = m2.weights();
  for (std::size_t i = 0; i < w1.size(); ++i) {
    for (std::int64_t j = 0; j < w1[i]->numel(); ++j) CHECK((*w1[i])[j] == (*w2[i])[j]);
  }
}

TEST_CASE("full loss gradient matches finite differences with frozen noise") {
  Rng rng(22);
  const Tensor members = oracles::random_tensor({3, 6}, rng, 0.8);
  const Tensor noise = oracles::random_tensor({3, 2}, rng);
  const IvaeConfig cfg{6, 2, 5, 0.01, 10.0};
  const IvaeModel model = IvaeModel::init(cfg, 23);
  LossWeights w;
  w.sd_scale = 0.1;
  SinkhornTrainConfig sk;
  sk.unrolled_iters = 25;

  Tape tape;
  std::vector<Tape::Id> pids;
  for (const Tensor* wt : model.weights()) pids.push_back(tape.param(*wt));
  const LossNodeIds ids = build_day_loss(tape, pids, cfg, members, noise, w, sk);
  tape.backward(ids.total);

  auto eval = [&](const IvaeModel& m) {
    Tape t2;
    std::vector<Tape::Id> cids;
    for (const Tensor* wt : m.weights()) cids.push_back(t2.constant(*wt));
    return t2.value(build_day_loss(t2, cids, cfg, members, noise, w, sk).total).item();
  };

  const double h = 1e-5;
  double max_rel = 0.0;
  const auto wts = model.weights();
  for (std::size_t p = 0; p < wts.size(); ++p) {
    for (std::int64_t i = 0; i < wts[p]->numel(); ++i) {
      IvaeModel plus = model, minus = model;
      (*plus.weights()[p])[i] += h;
      (*minus.weights()[p])[i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      max_rel = std::max(max_rel, oracles::rel_err(tape.grad(pids[p])[i], fd, 1e-4));
    }
  }
  CHECK(max_rel < 1e-3);
}

TEST_CASE("a heavy KL weight pushes the posterior toward the prior") {
  const std::vector<Tensor> train_days = synth_days(12, 5, 24);
  const std::vector<Tensor> val_days = synth_days(4, 5, 25);

  auto posterior_gap = [&](double w3) {
    IvaeModel model = tiny_model(16, 2, 10, 26);
    LossWeights w;
    w.w3 = w3;
    w.sd_scale = 0.15;
    IvaeTrainConfig tcfg = quick_train_config(60, 27);
    tcfg.lr.initial_lr = 1e-2;
    tcfg.opt.lr = 1e-2;
    train(model, train_days, val_days, w, tcfg);
    double mu_abs = 0.0, sg_gap = 0.0;
    for (const Tensor& day : val_days) {
      Tensor mu, sigma;
      model.encode_ensemble(day, mu, sigma);
      for (std::int64_t k = 0; k < 2; ++k) {
        mu_abs += std::fabs(mu[k]);
        sg_gap += std::fabs(sigma[k] - 1.0);
      }
    }
    return std::make_pair(mu_abs, sg_gap);
  };

  const auto [mu_small, sg_small] = posterior_gap(0.01);
  const auto [mu_large, sg_large] = posterior_gap(10.0);
  CHECK(mu_large < mu_small);
  CHECK(sg_large < sg_small);
}
