#include "enslat/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "enslat/model_io.hpp"
#include "enslat/twostep.hpp"

namespace enslat::harness {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Deterministic, round-trippable float formatting for all emitted files.
std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

constexpr std::uint64_t kSeedInit = 100;
constexpr std::uint64_t kSeedTrain = 200;
constexpr std::uint64_t kSeedCalibration = 300;
constexpr std::uint64_t kSeedEval = 400;

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t purpose, std::uint64_t key) {
  return Rng(root).fork(purpose, key).seed();
}

std::int64_t method_id(const std::string& method) {
  if (method == "pca") return 0;
  if (method == "ae") return 1;
  if (method == "ivae") return 2;
  if (method == "identity") return 3;
  throw std::invalid_argument("unknown method: " + method);
}

}  // namespace

// --- config ---------------------------------------------------------------------

namespace {

void parse_range(const json& j, fields::DayRange& r) {
  if (!j.is_array() || j.size() != 2) {
    throw std::invalid_argument("config: split ranges must be [begin, end) pairs");
  }
  r.begin = j[0].get<std::int64_t>();
  r.end = j[1].get<std::int64_t>();
}

void from_json_into(const json& j, ExperimentConfig& cfg) {
  if (j.contains("dataset")) cfg.dataset_path = j["dataset"].get<std::string>();
  if (j.contains("grf")) {
    const json& g = j["grf"];
    if (g.contains("height")) cfg.grf.height = g["height"].get<std::int64_t>();
    if (g.contains("width")) cfg.grf.width = g["width"].get<std::int64_t>();
    if (g.contains("length_scale")) cfg.grf.length_scale = g["length_scale"].get<double>();
    if (g.contains("day_signal_std")) cfg.grf.day_signal_std = g["day_signal_std"].get<double>();
    if (g.contains("member_noise_std")) {
      cfg.grf.member_noise_std = g["member_noise_std"].get<double>();
    }
    if (g.contains("seasonal_amplitude")) {
      cfg.grf.seasonal_amplitude = g["seasonal_amplitude"].get<double>();
    }
    if (g.contains("n_days")) cfg.grf.n_days = g["n_days"].get<std::int64_t>();
    if (g.contains("n_members")) cfg.grf.n_members = g["n_members"].get<std::int64_t>();
  }
  if (j.contains("split")) {
    fields::SplitSpec split;
    parse_range(j["split"]["train"], split.train);
    parse_range(j["split"]["val"], split.validation);
    parse_range(j["split"]["test"], split.test);
    cfg.split = split;
  }
  if (j.contains("method")) cfg.method = j["method"].get<std::string>();
  if (j.contains("latent_dims")) cfg.latent_dims = j["latent_dims"].get<std::vector<std::int64_t>>();
  if (j.contains("train")) {
    const json& t = j["train"];
    if (t.contains("hidden_width")) cfg.train.hidden_width = t["hidden_width"].get<std::int64_t>();
    if (t.contains("batch_size")) cfg.train.batch_size = t["batch_size"].get<std::int64_t>();
    if (t.contains("max_epochs")) cfg.train.max_epochs = t["max_epochs"].get<std::int64_t>();
    if (t.contains("early_stop_patience")) {
      cfg.train.early_stop_patience = t["early_stop_patience"].get<int>();
    }
    if (t.contains("initial_lr")) cfg.train.initial_lr = t["initial_lr"].get<double>();
    if (t.contains("weight_decay")) cfg.train.weight_decay = t["weight_decay"].get<double>();
  }
  if (j.contains("loss_weights")) {
    const json& w = j["loss_weights"];
    if (w.contains("w1")) cfg.weights.w1 = w["w1"].get<double>();
    if (w.contains("w2")) cfg.weights.w2 = w["w2"].get<double>();
    if (w.contains("w3")) cfg.weights.w3 = w["w3"].get<double>();
    if (w.contains("ed_scale")) cfg.weights.ed_scale = w["ed_scale"].get<double>();
    if (w.contains("sd_scale")) {
      if (w["sd_scale"].is_string() && w["sd_scale"].get<std::string>() == "auto") {
        cfg.weights.sd_scale_auto = true;
      } else {
        cfg.weights.sd_scale = w["sd_scale"].get<double>();
        cfg.weights.sd_scale_auto = false;
      }
    }
    if (w.contains("kl_scale")) cfg.weights.kl_scale = w["kl_scale"].get<double>();
    if (w.contains("calibration_epochs")) {
      cfg.weights.calibration_epochs = w["calibration_epochs"].get<std::int64_t>();
    }
  }
  if (j.contains("metrics")) {
    const json& m = j["metrics"];
    if (m.contains("sinkhorn_eps_factor")) {
      cfg.metrics.sinkhorn_eps_factor = m["sinkhorn_eps_factor"].get<double>();
    }
    if (m.contains("sinkhorn_max_iters")) {
      cfg.metrics.sinkhorn_max_iters = m["sinkhorn_max_iters"].get<int>();
    }
    if (m.contains("sinkhorn_tol")) cfg.metrics.sinkhorn_tol = m["sinkhorn_tol"].get<double>();
    if (m.contains("sinkhorn_train_iters")) {
      cfg.metrics.sinkhorn_train_iters = m["sinkhorn_train_iters"].get<int>();
    }
  }
  if (j.contains("ablate_omega2")) cfg.ablate_omega2 = j["ablate_omega2"].get<std::vector<double>>();
  if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();
  if (j.contains("reference")) cfg.reference_dir = j["reference"].get<std::string>();
  if (j.contains("export_split")) cfg.export_split = j["export_split"].get<std::string>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
}

}  // namespace

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  json j = json::parse(is);
  ExperimentConfig cfg;
  from_json_into(j, cfg);
  return cfg;
}

void apply_json_overrides(ExperimentConfig& cfg, const std::string& json_text) {
  from_json_into(json::parse(json_text), cfg);
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = cfg.dataset_path;
  j["grf"] = {{"height", cfg.grf.height},
              {"width", cfg.grf.width},
              {"length_scale", cfg.grf.length_scale},
              {"day_signal_std", cfg.grf.day_signal_std},
              {"member_noise_std", cfg.grf.member_noise_std},
              {"seasonal_amplitude", cfg.grf.seasonal_amplitude},
              {"n_days", cfg.grf.n_days},
              {"n_members", cfg.grf.n_members}};
  if (cfg.split) {
    j["split"] = {{"train", {cfg.split->train.begin, cfg.split->train.end}},
                  {"val", {cfg.split->validation.begin, cfg.split->validation.end}},
                  {"test", {cfg.split->test.begin, cfg.split->test.end}}};
  }
  j["method"] = cfg.method;
  j["latent_dims"] = cfg.latent_dims;
  j["train"] = {{"hidden_width", cfg.train.hidden_width},
                {"batch_size", cfg.train.batch_size},
                {"max_epochs", cfg.train.max_epochs},
                {"early_stop_patience", cfg.train.early_stop_patience},
                {"initial_lr", cfg.train.initial_lr},
                {"weight_decay", cfg.train.weight_decay}};
  j["loss_weights"] = {{"w1", cfg.weights.w1},
                       {"w2", cfg.weights.w2},
                       {"w3", cfg.weights.w3},
                       {"ed_scale", cfg.weights.ed_scale},
                       {"sd_scale", cfg.weights.sd_scale},
                       {"sd_scale_auto", cfg.weights.sd_scale_auto},
                       {"kl_scale", cfg.weights.kl_scale},
                       {"calibration_epochs", cfg.weights.calibration_epochs}};
  j["metrics"] = {{"sinkhorn_eps_factor", cfg.metrics.sinkhorn_eps_factor},
                  {"sinkhorn_max_iters", cfg.metrics.sinkhorn_max_iters},
                  {"sinkhorn_tol", cfg.metrics.sinkhorn_tol},
                  {"sinkhorn_train_iters", cfg.metrics.sinkhorn_train_iters}};
  j["ablate_omega2"] = cfg.ablate_omega2;
  j["out"] = cfg.out_dir;
  j["reference"] = cfg.reference_dir;
  j["export_split"] = cfg.export_split;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

fields::SplitSpec resolve_split(const ExperimentConfig& cfg, std::int64_t n_days) {
  fields::SplitSpec split;
  if (cfg.split) {
    split = *cfg.split;
  } else {
    split.train = {0, n_days * 8 / 10};
    split.validation = {split.train.end, n_days * 9 / 10};
    split.test = {split.validation.end, n_days};
  }
  split.validate(n_days);
  return split;
}

// --- file paths -------------------------------------------------------------------

std::string model_path(const std::string& out_dir, std::int64_t d_latent) {
  return out_dir + "/model_d" + std::to_string(d_latent) + ".bin";
}
std::string eval_csv_path(const std::string& out_dir, std::int64_t d_latent) {
  return out_dir + "/eval_d" + std::to_string(d_latent) + "_per_day.csv";
}
std::string eval_json_path(const std::string& out_dir, std::int64_t d_latent) {
  return out_dir + "/eval_d" + std::to_string(d_latent) + "_aggregate.json";
}
std::string latents_csv_path(const std::string& out_dir, std::int64_t d_latent) {
  return out_dir + "/latents_d" + std::to_string(d_latent) + ".csv";
}
std::string history_csv_path(const std::string& out_dir, std::int64_t d_latent) {
  return out_dir + "/history_d" + std::to_string(d_latent) + ".csv";
}

namespace {

void ensure_dir(const std::string& dir) {
  if (dir.empty()) throw std::invalid_argument("output directory not set (use --out or \"out\")");
  fs::create_directories(dir);
}

std::ofstream open_text(const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

void write_resolved_config(const ExperimentConfig& cfg, double resolved_sd_scale) {
  ExperimentConfig echo = cfg;
  echo.weights.sd_scale = resolved_sd_scale;
  echo.weights.sd_scale_auto = false;
  std::ofstream os = open_text(cfg.out_dir + "/config.resolved.json");
  os << config_to_json(echo);
}

void validate_latent_dims(const ExperimentConfig& cfg, const fields::EnsembleDataset& ds) {
  for (std::int64_t k : cfg.latent_dims) {
    if (k < 1 || k >= ds.n_members) {
      throw std::invalid_argument("latent dim " + std::to_string(k) +
                                  " must be >= 1 and < member count " +
                                  std::to_string(ds.n_members));
    }
  }
}

void write_history_csv(const std::string& path, const ae::TrainResult& result, bool components) {
  std::ofstream os = open_text(path);
  os << "epoch,lr,train_loss,val_loss,best_val";
  if (components) os << ",ed,sd,kl";
  os << "\n";
  for (const ae::EpochRecord& r : result.history) {
    os << r.epoch << "," << fmt(r.lr) << "," << fmt(r.train_loss) << "," << fmt(r.val_loss) << ","
       << fmt(r.best_val);
    if (components) os << "," << fmt(r.ed) << "," << fmt(r.sd) << "," << fmt(r.kl);
    os << "\n";
  }
}

}  // namespace

// --- synth -------------------------------------------------------------------------

void cmd_synth(const ExperimentConfig& cfg) {
  if (cfg.dataset_path.empty()) {
    throw std::invalid_argument("cmd_synth: \"dataset\" must name the output EFF path");
  }
  synth::GrfConfig g = cfg.grf;
  g.seed = cfg.seed;
  fields::EnsembleDataset ds = synth::generate(g);
  if (const fs::path parent = fs::path(cfg.dataset_path).parent_path(); !parent.empty()) {
    fs::create_directories(parent);
  }
  fields::write_eff(ds, cfg.dataset_path);
  std::cout << "synth: wrote " << cfg.dataset_path << " (" << ds.n_days << " days, "
            << ds.n_members << " members, " << ds.height << "x" << ds.width << ")\n";
}

// --- train -------------------------------------------------------------------------

ivae::LossWeights resolve_loss_weights(const ExperimentConfig& cfg,
                                       const fields::EnsembleDataset& std_ds,
                                       const fields::SplitSpec& split) {
  ivae::LossWeights w;
  w.w1 = cfg.weights.w1;
  w.w2 = cfg.weights.w2;
  w.w3 = cfg.weights.w3;
  w.ed_scale = cfg.weights.ed_scale;
  w.sd_scale = cfg.weights.sd_scale;
  w.kl_scale = cfg.weights.kl_scale;
  if (!cfg.weights.sd_scale_auto) return w;

  // Calibration pilot: short training with the default scale, then pick
  // sd_scale so the mean scaled Sinkhorn term matches the mean scaled
  // energy term over those epochs. One pilot per invocation; every run of
  // the sweep reuses the same scale.
  const std::int64_t k = cfg.latent_dims.front();
  ivae::IvaeConfig icfg{std_ds.d_data(), k, cfg.train.hidden_width, 0.01, 10.0};
  ivae::IvaeModel pilot =
      ivae::IvaeModel::init(icfg, derive_seed(cfg.seed, kSeedCalibration, 1));

  ivae::IvaeTrainConfig tcfg;
  tcfg.batch_ensembles = cfg.train.batch_size > 0 ? cfg.train.batch_size : 8;
  tcfg.max_epochs = cfg.weights.calibration_epochs;
  tcfg.early_stop_patience = std::numeric_limits<int>::max();
  tcfg.lr.initial_lr = cfg.train.initial_lr;
  tcfg.opt.lr = cfg.train.initial_lr;
  tcfg.opt.weight_decay = cfg.train.weight_decay;
  tcfg.seed = derive_seed(cfg.seed, kSeedCalibration, 2);
  tcfg.sinkhorn.unrolled_iters = cfg.metrics.sinkhorn_train_iters;

  const std::vector<Tensor> train_days =
      ivae::day_ensembles(std_ds, split.train.begin, split.train.end);
  const std::vector<Tensor> val_days =
      ivae::day_ensembles(std_ds, split.validation.begin, split.validation.end);
  const ae::TrainResult pilot_result = ivae::train(pilot, train_days, val_days, w, tcfg);

  std::vector<double> eds, sds;
  for (const ae::EpochRecord& r : pilot_result.history) {
    eds.push_back(r.ed);
    sds.push_back(r.sd);
  }
  const double mean_ed = exact_mean(eds);
  const double mean_sd = exact_mean(sds);
  if (mean_sd > 0.0 && mean_ed > 0.0) {
    w.sd_scale = w.ed_scale * mean_ed / mean_sd;
  }
  std::cout << "calibration: sd_scale = " << fmt(w.sd_scale) << " (mean ed " << fmt(mean_ed)
            << ", mean sd " << fmt(mean_sd) << ")\n";
  return w;
}

namespace {

ae::TrainConfig make_ae_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  ae::TrainConfig t;
  t.batch_size = cfg.train.batch_size > 0 ? cfg.train.batch_size : 1024;
  t.max_epochs = cfg.train.max_epochs;
  t.early_stop_patience = cfg.train.early_stop_patience;
  t.lr.initial_lr = cfg.train.initial_lr;
  t.opt.lr = cfg.train.initial_lr;
  t.opt.weight_decay = cfg.train.weight_decay;
  t.seed = seed;
  return t;
}

ivae::IvaeTrainConfig make_ivae_train_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  ivae::IvaeTrainConfig t;
  t.batch_ensembles = cfg.train.batch_size > 0 ? cfg.train.batch_size : 8;
  t.max_epochs = cfg.train.max_epochs;
  t.early_stop_patience = cfg.train.early_stop_patience;
  t.lr.initial_lr = cfg.train.initial_lr;
  t.opt.lr = cfg.train.initial_lr;
  t.opt.weight_decay = cfg.train.weight_decay;
  t.seed = seed;
  t.sinkhorn.unrolled_iters = cfg.metrics.sinkhorn_train_iters;
  return t;
}

void train_one_dim(const ExperimentConfig& cfg, const fields::SplitSpec& split,
                   const fields::Standardizer& std_scaler,
                   const fields::EnsembleDataset& std_ds, const ivae::LossWeights& weights,
                   std::int64_t k) {
  const std::int64_t mid = method_id(cfg.method);
  const std::uint64_t init_seed = derive_seed(cfg.seed, kSeedInit + mid, k);
  const std::uint64_t train_seed = derive_seed(cfg.seed, kSeedTrain + mid, k);

  if (cfg.method == "pca") {
    const Tensor rows = std_ds.member_rows(split.train.begin, split.train.end);
    pca::PcaModel model = pca::fit(rows, k);
    model_io::save_pca(model_path(cfg.out_dir, k), model, std_scaler);
    std::ofstream os = open_text(cfg.out_dir + "/explained_variance_d" + std::to_string(k) + ".csv");
    os << "k,explained_variance_ratio\n";
    for (std::int64_t i = 1; i <= k; ++i) {
      os << i << "," << fmt(pca::explained_variance_ratio(model, i)) << "\n";
    }
    std::cout << "train pca d=" << k << ": explained variance "
              << fmt(pca::explained_variance_ratio(model, k)) << "\n";
    return;
  }

  if (cfg.method == "ae") {
    const Tensor train_rows = std_ds.member_rows(split.train.begin, split.train.end);
    const Tensor val_rows = std_ds.member_rows(split.validation.begin, split.validation.end);
    ae::AeConfig acfg{std_ds.d_data(), k, cfg.train.hidden_width, 0.01};
    ae::AeModel model = ae::AeModel::init(acfg, init_seed);
    const ae::TrainResult result =
        ae::train(model, train_rows, val_rows, make_ae_train_config(cfg, train_seed));
    model_io::save_ae(model_path(cfg.out_dir, k), model, std_scaler);
    write_history_csv(history_csv_path(cfg.out_dir, k), result, false);
    std::cout << "train ae d=" << k << ": best val MAE " << fmt(result.best_val) << " at epoch "
              << result.best_epoch << " (" << result.history.size() << " epochs)\n";
    return;
  }

  if (cfg.method == "ivae") {
    const std::vector<Tensor> train_days =
        ivae::day_ensembles(std_ds, split.train.begin, split.train.end);
    const std::vector<Tensor> val_days =
        ivae::day_ensembles(std_ds, split.validation.begin, split.validation.end);
    ivae::IvaeConfig icfg{std_ds.d_data(), k, cfg.train.hidden_width, 0.01, 10.0};
    ivae::IvaeModel model = ivae::IvaeModel::init(icfg, init_seed);
    const ae::TrainResult result =
        ivae::train(model, train_days, val_days, weights, make_ivae_train_config(cfg, train_seed));
    model_io::save_ivae(model_path(cfg.out_dir, k), model, std_scaler);
    write_history_csv(history_csv_path(cfg.out_dir, k), result, true);
    std::cout << "train ivae d=" << k << ": best val loss " << fmt(result.best_val) << " at epoch "
              << result.best_epoch << " (" << result.history.size() << " epochs)\n";
    return;
  }

  throw std::invalid_argument("cmd_train: method must be pca, ae or ivae");
}

}  // namespace

void cmd_train(const ExperimentConfig& cfg) {
  if (cfg.method == "identity") {
    throw std::invalid_argument("cmd_train: the identity debug method cannot be trained");
  }
  ensure_dir(cfg.out_dir);
  fields::EnsembleDataset ds = fields::read_eff(cfg.dataset_path);
  const fields::SplitSpec split = resolve_split(cfg, ds.n_days);
  validate_latent_dims(cfg, ds);

  const fields::Standardizer std_scaler = fields::fit_standardizer(ds, split);
  const fields::EnsembleDataset std_ds = fields::standardize(ds, std_scaler);

  ivae::LossWeights weights;
  double resolved_sd_scale = cfg.weights.sd_scale;
  if (cfg.method == "ivae") {
    weights = resolve_loss_weights(cfg, std_ds, split);
    resolved_sd_scale = weights.sd_scale;
  }
  write_resolved_config(cfg, resolved_sd_scale);

  for (std::int64_t k : cfg.latent_dims) {
    train_one_dim(cfg, split, std_scaler, std_ds, weights, k);
  }
}

// --- evaluate ----------------------------------------------------------------------

DayMetrics evaluate_day(const Tensor& input, const Tensor& recon, const MetricSettings& ms) {
  DayMetrics out;
  const std::int64_t d = input.cols();

  const Tensor absdiff = metrics::pixel_mean_absdiff(input, recon);
  const Tensor std_diff = metrics::pixel_std_diff(input, recon);
  const Tensor in_std = metrics::pixel_std(input);
  const Tensor rec_std = metrics::pixel_std(recon);
  out.mean_abs_mean_diff = exact_mean(absdiff.values());
  out.mean_std_diff = exact_mean(std_diff.values());
  out.mean_input_std = exact_mean(in_std.values());
  out.mean_recon_std = exact_mean(rec_std.values());

  std::vector<double> ed_px(static_cast<std::size_t>(d));
  std::vector<double> w1_px(static_cast<std::size_t>(d));
  std::vector<double> xcol(static_cast<std::size_t>(input.rows()));
  std::vector<double> ycol(static_cast<std::size_t>(recon.rows()));
  for (std::int64_t j = 0; j < d; ++j) {
    for (std::int64_t i = 0; i < input.rows(); ++i) xcol[static_cast<std::size_t>(i)] = input.at2(i, j);
    for (std::int64_t i = 0; i < recon.rows(); ++i) ycol[static_cast<std::size_t>(i)] = recon.at2(i, j);
    ed_px[static_cast<std::size_t>(j)] = metrics::energy_distance_uni(xcol, ycol);
    w1_px[static_cast<std::size_t>(j)] = metrics::wasserstein1_uni(xcol, ycol);
  }
  out.ed_uni_mean = exact_mean(ed_px);
  out.w1_uni_mean = exact_mean(w1_px);
  out.ed_multi = metrics::energy_distance_multi(input, recon);

  metrics::SinkhornConfig scfg;
  scfg.eps_factor = ms.sinkhorn_eps_factor;
  scfg.max_iters = ms.sinkhorn_max_iters;
  scfg.tol = ms.sinkhorn_tol;
  const metrics::SinkhornResult sr = metrics::sinkhorn_distance(input, recon, scfg);
  out.sinkhorn = sr.distance;
  out.sinkhorn_cost = sr.cost;
  out.sinkhorn_converged = sr.converged;
  return out;
}

namespace {

double skill_basis_value(const DayMetrics& m, std::size_t metric_index) {
  switch (metric_index) {
    case 0: return m.mean_abs_mean_diff;
    case 1: return m.ed_uni_mean;
    case 2: return m.ed_multi;
    case 3: return m.w1_uni_mean;
    default: return m.sinkhorn;
  }
}

// Reconstruction of one day's ensemble in physical units.
struct Reconstructor {
  std::string method;
  std::optional<model_io::LoadedPca> pca_model;
  std::optional<model_io::LoadedAe> ae_model;
  std::optional<model_io::LoadedIvae> ivae_model;

  Tensor operator()(const Tensor& input_phys, Rng& day_rng) const {
    if (method == "identity") return input_phys;
    if (method == "pca" || method == "ae") {
      const fields::Standardizer& s =
          method == "pca" ? pca_model->standardizer : ae_model->standardizer;
      const twostep::Projector proj = method == "pca"
                                          ? twostep::Projector::from_pca(pca_model->model)
                                          : twostep::Projector::from_ae(ae_model->model);
      const Tensor std_members = fields::standardize_rows(input_phys, s);
      const Tensor codes = twostep::encode_members(proj, std_members);
      const twostep::LatentGaussian dist = twostep::fit_latent_gaussian(codes);
      const Tensor recon_std = twostep::reconstruct(proj, dist, input_phys.rows(), day_rng);
      return fields::destandardize_rows(recon_std, s);
    }
    const fields::Standardizer& s = ivae_model->standardizer;
    const Tensor std_members = fields::standardize_rows(input_phys, s);
    Tensor mu, sigma;
    ivae_model->model.encode_ensemble(std_members, mu, sigma);
    const Tensor recon_std =
        ivae_model->model.sample_and_decode(mu, sigma, input_phys.rows(), day_rng);
    return fields::destandardize_rows(recon_std, s);
  }
};

Reconstructor load_reconstructor(const ExperimentConfig& cfg, std::int64_t k) {
  Reconstructor r;
  r.method = cfg.method;
  if (cfg.method == "identity") return r;
  const std::string path = model_path(cfg.out_dir, k);
  if (cfg.method == "pca") {
    r.pca_model = model_io::load_pca(path);
  } else if (cfg.method == "ae") {
    r.ae_model = model_io::load_ae(path);
  } else if (cfg.method == "ivae") {
    r.ivae_model = model_io::load_ivae(path);
  } else {
    throw std::invalid_argument("cmd_evaluate: unknown method " + cfg.method);
  }
  return r;
}

// Per-day reference scores for the skill basis, parsed from a reference
// run's per-day CSV.
std::optional<std::vector<std::array<double, 5>>> load_reference_scores(const std::string& dir,
                                                                        std::int64_t k,
                                                                        std::size_t n_days) {
  if (dir.empty()) return std::nullopt;
  const std::string path = eval_csv_path(dir, k);
  std::ifstream is(path);
  if (!is) {
    std::cerr << "warning: reference per-day file " << path
              << " not found; skill scores omitted\n";
    return std::nullopt;
  }
  std::string header;
  std::getline(is, header);
  std::vector<std::string> cols;
  {
    std::stringstream ss(header);
    std::string c;
    while (std::getline(ss, c, ',')) cols.push_back(c);
  }
  std::array<std::int64_t, 5> idx{};
  for (std::size_t m = 0; m < 5; ++m) {
    const auto it = std::find(cols.begin(), cols.end(), kSkillMetrics[m]);
    if (it == cols.end()) {
      std::cerr << "warning: reference file lacks column " << kSkillMetrics[m]
                << "; skill scores omitted\n";
      return std::nullopt;
    }
    idx[m] = it - cols.begin();
  }
  std::vector<std::array<double, 5>> rows;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    std::array<double, 5> vals{};
    for (std::size_t m = 0; m < 5; ++m) vals[m] = std::stod(cells[static_cast<std::size_t>(idx[m])]);
    rows.push_back(vals);
  }
  if (rows.size() != n_days) {
    std::cerr << "warning: reference has " << rows.size() << " days, expected " << n_days
              << "; skill scores omitted\n";
    return std::nullopt;
  }
  return rows;
}

void write_eval_outputs(const ExperimentConfig& cfg, std::int64_t k, const EvalReport& report) {
  {
    std::ofstream os = open_text(eval_csv_path(cfg.out_dir, k));
    os << "day_index,label,mean_abs_mean_diff,mean_std_diff,mean_input_std,mean_recon_std,"
          "ed_uni_mean,ed_multi,w1_uni_mean,sinkhorn,sinkhorn_cost,sinkhorn_converged";
    if (report.has_skill) {
      for (const char* name : kSkillMetrics) os << ",skill_" << name;
    }
    os << "\n";
    for (std::size_t i = 0; i < report.days.size(); ++i) {
      const DayMetrics& m = report.days[i];
      os << m.day_index << "," << m.label << "," << fmt(m.mean_abs_mean_diff) << ","
         << fmt(m.mean_std_diff) << "," << fmt(m.mean_input_std) << "," << fmt(m.mean_recon_std)
         << "," << fmt(m.ed_uni_mean) << "," << fmt(m.ed_multi) << "," << fmt(m.w1_uni_mean) << ","
         << fmt(m.sinkhorn) << "," << fmt(m.sinkhorn_cost) << ","
         << (m.sinkhorn_converged ? 1 : 0);
      if (report.has_skill) {
        for (double s : report.day_skills[i]) os << "," << fmt(s);
      }
      os << "\n";
    }
  }

  auto mean_of = [&](auto getter) {
    std::vector<double> vals;
    vals.reserve(report.days.size());
    for (const DayMetrics& m : report.days) vals.push_back(getter(m));
    return exact_mean(vals);
  };

  json agg;
  agg["method"] = cfg.method;
  agg["d_latent"] = k;
  agg["seed"] = cfg.seed;
  agg["n_test_days"] = report.days.size();
  agg["mean"] = {
      {"mean_abs_mean_diff", mean_of([](const DayMetrics& m) { return m.mean_abs_mean_diff; })},
      {"mean_std_diff", mean_of([](const DayMetrics& m) { return m.mean_std_diff; })},
      {"mean_input_std", mean_of([](const DayMetrics& m) { return m.mean_input_std; })},
      {"mean_recon_std", mean_of([](const DayMetrics& m) { return m.mean_recon_std; })},
      {"ed_uni_mean", mean_of([](const DayMetrics& m) { return m.ed_uni_mean; })},
      {"ed_multi", mean_of([](const DayMetrics& m) { return m.ed_multi; })},
      {"w1_uni_mean", mean_of([](const DayMetrics& m) { return m.w1_uni_mean; })},
      {"sinkhorn", mean_of([](const DayMetrics& m) { return m.sinkhorn; })},
      {"sinkhorn_cost", mean_of([](const DayMetrics& m) { return m.sinkhorn_cost; })}};
  agg["std_ratio_mean"] =
      mean_of([](const DayMetrics& m) { return m.mean_recon_std / m.mean_input_std; });
  {
    std::vector<double> conv;
    for (const DayMetrics& m : report.days) conv.push_back(m.sinkhorn_converged ? 1.0 : 0.0);
    agg["sinkhorn_converged_fraction"] = exact_mean(conv);
  }
  if (report.has_skill) {
    json sk;
    for (std::size_t m = 0; m < 5; ++m) {
      std::vector<double> vals;
      for (const auto& row : report.day_skills) {
        if (std::isfinite(row[m])) vals.push_back(row[m]);
      }
      sk[std::string("skill_") + kSkillMetrics[m]] =
          vals.empty() ? std::numeric_limits<double>::quiet_NaN() : exact_mean(vals);
    }
    agg["skill_mean"] = sk;
    agg["reference"] = cfg.reference_dir;
  }
  std::ofstream os = open_text(eval_json_path(cfg.out_dir, k));
  os << agg.dump(2) << "\n";
}

}  // namespace

void cmd_evaluate(const ExperimentConfig& cfg) {
  ensure_dir(cfg.out_dir);
  fields::EnsembleDataset ds = fields::read_eff(cfg.dataset_path);
  const fields::SplitSpec split = resolve_split(cfg, ds.n_days);
  if (split.test.size() < 1) throw std::invalid_argument("cmd_evaluate: empty test split");

  for (std::int64_t k : cfg.latent_dims) {
    const Reconstructor recon = load_reconstructor(cfg, k);
    const Rng root(cfg.seed);

    EvalReport report;
    for (std::int64_t t = split.test.begin; t < split.test.end; ++t) {
      const Tensor input = ds.day_members(t);
      Rng day_rng = root.fork(kSeedEval, static_cast<std::uint64_t>(t));
      const Tensor rec = recon(input, day_rng);
      DayMetrics m = evaluate_day(input, rec, cfg.metrics);
      m.day_index = t;
      m.label = ds.day_labels[static_cast<std::size_t>(t)];
      report.days.push_back(std::move(m));
    }

    const auto reference =
        load_reference_scores(cfg.reference_dir, k, report.days.size());
    if (reference) {
      report.has_skill = true;
      for (std::size_t i = 0; i < report.days.size(); ++i) {
        std::array<double, 5> skills{};
        for (std::size_t m = 0; m < 5; ++m) {
          skills[m] = metrics::skill_score(skill_basis_value(report.days[i], m), (*reference)[i][m]);
        }
        report.day_skills.push_back(skills);
      }
    }
    write_eval_outputs(cfg, k, report);
    std::cout << "evaluate " << cfg.method << " d=" << k << ": " << report.days.size()
              << " test days -> " << eval_csv_path(cfg.out_dir, k) << "\n";
  }
}

// --- ablate ------------------------------------------------------------------------

void cmd_ablate(const ExperimentConfig& cfg) {
  if (cfg.method != "ivae") throw std::invalid_argument("cmd_ablate: method must be ivae");
  ensure_dir(cfg.out_dir);
  fields::EnsembleDataset ds = fields::read_eff(cfg.dataset_path);
  const fields::SplitSpec split = resolve_split(cfg, ds.n_days);
  validate_latent_dims(cfg, ds);
  const std::int64_t k = cfg.latent_dims.front();

  const fields::Standardizer std_scaler = fields::fit_standardizer(ds, split);
  const fields::EnsembleDataset std_ds = fields::standardize(ds, std_scaler);
  const ivae::LossWeights base_weights = resolve_loss_weights(cfg, std_ds, split);
  write_resolved_config(cfg, base_weights.sd_scale);

  std::ofstream table = open_text(cfg.out_dir + "/ablation.csv");
  table << "omega2,omega1,mean_ed_multi,mean_sinkhorn\n";

  for (double omega2 : cfg.ablate_omega2) {
    ExperimentConfig run = cfg;
    run.out_dir = cfg.out_dir + "/w2_" + fmt(omega2);
    run.latent_dims = {k};
    run.weights.w1 = 1.0 - omega2;
    run.weights.w2 = omega2;
    run.weights.sd_scale = base_weights.sd_scale;
    run.weights.sd_scale_auto = false;
    run.reference_dir.clear();
    // Same seed across the sweep: identical init and batch order, only the
    // loss weights vary.
    run.seed = cfg.seed;
    cmd_train(run);
    cmd_evaluate(run);

    std::ifstream agg(eval_json_path(run.out_dir, k));
    const json j = json::parse(agg);
    table << fmt(omega2) << "," << fmt(1.0 - omega2) << ","
          << fmt(j["mean"]["ed_multi"].get<double>()) << ","
          << fmt(j["mean"]["sinkhorn"].get<double>()) << "\n";
  }
  std::cout << "ablate: wrote " << cfg.out_dir << "/ablation.csv\n";
}

// --- export latents ------------------------------------------------------------------

namespace {

fields::DayRange export_range(const ExperimentConfig& cfg, const fields::SplitSpec& split,
                              std::int64_t n_days) {
  if (cfg.export_split == "train") return split.train;
  if (cfg.export_split == "val") return split.validation;
  if (cfg.export_split == "test") return split.test;
  if (cfg.export_split == "all") return {0, n_days};
  throw std::invalid_argument("export_split must be train, val, test or all");
}

// Month number for ISO labels, otherwise the fraction day_index / n_days.
std::string season_label(const std::string& label, std::int64_t index, std::int64_t n_days) {
  if (label.size() == 10 && label[4] == '-' && label[7] == '-') {
    return std::to_string(std::stoi(label.substr(5, 2)));
  }
  return fmt(static_cast<double>(index) / static_cast<double>(n_days));
}

}  // namespace

void cmd_export_latents(const ExperimentConfig& cfg) {
  if (cfg.method == "identity") {
    throw std::invalid_argument("cmd_export_latents: identity has no latent space");
  }
  ensure_dir(cfg.out_dir);
  fields::EnsembleDataset ds = fields::read_eff(cfg.dataset_path);
  const fields::SplitSpec split = resolve_split(cfg, ds.n_days);
  const fields::DayRange range = export_range(cfg, split, ds.n_days);

  for (std::int64_t k : cfg.latent_dims) {
    const Reconstructor recon = load_reconstructor(cfg, k);
    std::ofstream os = open_text(latents_csv_path(cfg.out_dir, k));
    os << "day_index,label,season";
    for (std::int64_t i = 0; i < k; ++i) os << ",mu_" << i;
    for (std::int64_t i = 0; i < k; ++i) os << ",sigma_" << i;
    os << "\n";

    for (std::int64_t t = range.begin; t < range.end; ++t) {
      const Tensor input = ds.day_members(t);
      Tensor mu, sigma;
      if (cfg.method == "ivae") {
        const Tensor std_members =
            fields::standardize_rows(input, recon.ivae_model->standardizer);
        recon.ivae_model->model.encode_ensemble(std_members, mu, sigma);
      } else {
        const fields::Standardizer& s = cfg.method == "pca" ? recon.pca_model->standardizer
                                                            : recon.ae_model->standardizer;
        const twostep::Projector proj =
            cfg.method == "pca" ? twostep::Projector::from_pca(recon.pca_model->model)
                                : twostep::Projector::from_ae(recon.ae_model->model);
        const Tensor codes =
            twostep::encode_members(proj, fields::standardize_rows(input, s));
        const twostep::LatentGaussian dist = twostep::fit_latent_gaussian(codes);
        mu = dist.mean;
        sigma = Tensor::zeros({k});
        for (std::int64_t i = 0; i < k; ++i) sigma[i] = std::sqrt(dist.covariance.at2(i, i));
      }
      os << t << "," << ds.day_labels[static_cast<std::size_t>(t)] << ","
         << season_label(ds.day_labels[static_cast<std::size_t>(t)], t, ds.n_days);
      for (std::int64_t i = 0; i < k; ++i) os << "," << fmt(mu[i]);
      for (std::int64_t i = 0; i < k; ++i) os << "," << fmt(sigma[i]);
      os << "\n";
    }
    std::cout << "export-latents " << cfg.method << " d=" << k << " -> "
              << latents_csv_path(cfg.out_dir, k) << "\n";
  }
}

}  // namespace enslat::harness
