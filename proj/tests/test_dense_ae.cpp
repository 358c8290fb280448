#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "enslat/dense_ae.hpp"
#include "enslat/linalg.hpp"
#include "enslat/synthgen.hpp"
#include "enslat/tape.hpp"
#include "oracles.hpp"

using namespace enslat;
using namespace enslat::ae;

TEST_CASE("init: reproducible, zero biases, Kaiming-scale weights") {
  const AeConfig cfg{32, 3, 16, 0.01};
  const AeModel a = AeModel::init(cfg, 9);
  const AeModel b = AeModel::init(cfg, 9);
  const auto wa = a.weights();
  const auto wb = b.weights();
  for (std::size_t i = 0; i < wa.size(); ++i) {
    REQUIRE(wa[i]->numel() == wb[i]->numel());
    for (std::int64_t j = 0; j < wa[i]->numel(); ++j) CHECK((*wa[i])[j] == (*wb[i])[j]);
  }
  for (double v : a.enc_b1.values()) CHECK(v == 0.0);
  for (double v : a.dec_b2.values()) CHECK(v == 0.0);

  const AeModel c = AeModel::init(cfg, 10);
  CHECK(oracles::max_abs_diff(a.enc_w1, c.enc_w1) > 0.0);

  // Empirical weight std within 20% of the Kaiming target, per layer.
  auto check_layer = [&](const Tensor& w, std::int64_t fan_in) {
    const double target = kaiming_uniform_bound(fan_in, cfg.slope) / std::sqrt(3.0);
    double acc = 0.0;
    for (double v : w.values()) acc += v * v;
    const double sd = std::sqrt(acc / static_cast<double>(w.numel()));
    CHECK(std::fabs(sd - target) < 0.2 * target);
  };
  check_layer(a.enc_w1, cfg.d_data);
  check_layer(a.enc_w2, cfg.width);
  check_layer(a.dec_w1, cfg.d_latent);
  check_layer(a.dec_w2, cfg.width);
}

TEST_CASE("encode/decode: zero weights give zero outputs; LeakyReLU slope") {
  AeConfig cfg{4, 2, 3, 0.01};
  AeModel m = AeModel::init(cfg, 0);
  for (Tensor* w : m.weights()) {
    for (double& v : w->values()) v = 0.0;
  }
  Rng rng(1);
  const Tensor x = oracles::random_tensor({5, 4}, rng);
  const Tensor code = m.encode(x);
  const Tensor out = m.decode(code);
  for (double v : code.values()) CHECK(v == 0.0);
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("encode reduces to chained matmul for slope 1 and zero biases") {
  AeConfig lin{3, 2, 4, 1.0};
  AeModel lm = AeModel::init(lin, 2);
  Rng rng(3);
  const Tensor x = oracles::random_tensor({6, 3}, rng);
  const Tensor expected = matmul(matmul(x, lm.enc_w1), lm.enc_w2);
  CHECK(oracles::max_abs_diff(lm.encode(x), expected) < 1e-12);
}

TEST_CASE("LeakyReLU negative slope value") {
  AeConfig cfg{1, 1, 1, 0.01};
  AeModel m = AeModel::init(cfg, 4);
  m.enc_w1 = Tensor({1, 1}, {1.0});
  m.enc_b1 = Tensor({1}, {0.0});
  m.enc_w2 = Tensor({1, 1}, {1.0});
  m.enc_b2 = Tensor({1}, {0.0});
  const Tensor x({1, 1}, {-1.0});
  CHECK(m.encode(x).at2(0, 0) == doctest::Approx(-0.01));
}

namespace {

Tensor synth_rows(std::int64_t days, std::int64_t members, std::uint64_t seed) {
  synth::GrfConfig cfg;
  cfg.height = 4;
  cfg.width = 4;
  cfg.length_scale = 1.5;
  cfg.n_days = days;
  cfg.n_members = members;
  cfg.seed = seed;
  const fields::EnsembleDataset ds = synth::generate(cfg);
  return ds.member_rows(0, days);
}

}  // namespace

TEST_CASE("training reduces MAE and restores the best checkpoint") {
  const Tensor train_rows = synth_rows(50, 4, 5);  // 200 samples
  const Tensor val_rows = synth_rows(10, 4, 6);

  AeConfig acfg{16, 2, 8, 0.01};
  AeModel model = AeModel::init(acfg, 7);

  TrainConfig tcfg;
  tcfg.batch_size = 32;
  tcfg.max_epochs = 50;
  tcfg.early_stop_patience = 50;
  tcfg.lr.initial_lr = 1e-3;
  tcfg.opt.lr = 1e-3;
  tcfg.seed = 8;

  const double initial = validation_mae(model, train_rows);
  const TrainResult result = train(model, train_rows, val_rows, tcfg);
  const double final_train = validation_mae(model, train_rows);
  CHECK(final_train < initial);
  CHECK(result.history.size() <= 50);

  // Best-checkpoint property: returned weights reproduce the recorded
  // minimum validation MAE, and no epoch beats it.
  const double returned_val = validation_mae(model, val_rows);
  double min_val = 1e300;
  for (const EpochRecord& r : result.history) min_val = std::min(min_val, r.val_loss);
  CHECK(returned_val == min_val);
  for (const EpochRecord& r : result.history) CHECK(returned_val <= r.val_loss);
}

TEST_CASE("early stopping halts after the patience window") {
  const Tensor train_rows = synth_rows(20, 4, 9);
  const Tensor val_rows = synth_rows(6, 4, 10);

  AeConfig acfg{16, 2, 8, 0.01};
  AeModel model = AeModel::init(acfg, 11);

  TrainConfig tcfg;
  tcfg.batch_size = 16;
  tcfg.max_epochs = 400;
  tcfg.early_stop_patience = 5;
  tcfg.lr.initial_lr = 1e-3;
  tcfg.opt.lr = 1e-3;
  tcfg.seed = 12;

  const TrainResult result = train(model, train_rows, val_rows, tcfg);
  CHECK(static_cast<std::int64_t>(result.history.size()) < tcfg.max_epochs);
  // The last `patience` epochs did not improve on the best.
  const std::size_t n = result.history.size();
  const double best = result.best_val;
  for (std::size_t i = n - 5; i < n; ++i) CHECK(result.history[i].val_loss >= best);
}

TEST_CASE("training is deterministic under a fixed seed") {
  const Tensor train_rows = synth_rows(20, 4, 13);
  const Tensor val_rows = synth_rows(5, 4, 14);
  AeConfig acfg{16, 2, 8, 0.01};
  TrainConfig tcfg;
  tcfg.batch_size = 16;
  tcfg.max_epochs = 8;
  tcfg.early_stop_patience = 20;
  tcfg.seed = 15;

  AeModel m1 = AeModel::init(acfg, 16);
  AeModel m2 = AeModel::init(acfg, 16);
  const TrainResult r1 = train(m1, train_rows, val_rows, tcfg);
  const TrainResult r2 = train(m2, train_rows, val_rows, tcfg);
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

TEST_CASE("MAE gradient matches finite differences away from kinks") {
  Rng rng(17);
  const Tensor x = oracles::random_tensor({4, 5}, rng);
  AeConfig acfg{5, 2, 3, 0.01};
  AeModel model = AeModel::init(acfg, 18);

  Tape tape;
  std::vector<Tensor*> wts = model.weights();
  std::vector<Tape::Id> pids;
  for (Tensor* w : wts) pids.push_back(tape.param(*w));
  const Tape::Id input = tape.constant(x);
  Tape::Id h = tape.leaky_relu(tape.add_rowvec(tape.matmul(input, pids[0]), pids[1]), 0.01);
  Tape::Id code = tape.add_rowvec(tape.matmul(h, pids[2]), pids[3]);
  Tape::Id hd = tape.leaky_relu(tape.add_rowvec(tape.matmul(code, pids[4]), pids[5]), 0.01);
  Tape::Id recon = tape.add_rowvec(tape.matmul(hd, pids[6]), pids[7]);
  Tape::Id loss = tape.mean(tape.abs(tape.sub(recon, input)));
  tape.backward(loss);

  auto eval = [&](const AeModel& m) {
    double acc = 0.0;
    const Tensor out = m.decode(m.encode(x));
    for (std::int64_t i = 0; i < x.numel(); ++i) acc += std::fabs(out[i] - x[i]);
    return acc / static_cast<double>(x.numel());
  };

  const double h_step = 1e-6;
  double max_rel = 0.0;
  for (std::size_t p = 0; p < wts.size(); ++p) {
    for (std::int64_t i = 0; i < wts[p]->numel(); ++i) {
      AeModel plus = model, minus = model;
      (*plus.weights()[p])[i] += h_step;
      (*minus.weights()[p])[i] -= h_step;
      const double fd = (eval(plus) - eval(minus)) / (2.0 * h_step);
      max_rel = std::max(max_rel, oracles::rel_err(tape.grad(pids[p])[i], fd, 1e-4));
    }
  }
  CHECK(max_rel < 1e-4);
}
