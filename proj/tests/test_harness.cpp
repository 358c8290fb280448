#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "enslat/harness.hpp"
#include "enslat/model_io.hpp"
#include "enslat/twostep.hpp"

using namespace enslat;
using namespace enslat::harness;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t col(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i) {
      if (header[i] == name) return i;
    }
    REQUIRE_MESSAGE(false, "missing column " << name);
    return 0;
  }
  double num(std::size_t row, const std::string& name) const {
    return std::stod(rows[row][col(name)]);
  }
};

Csv read_csv(const fs::path& p) {
  std::ifstream is(p);
  REQUIRE(is.good());
  Csv out;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (first) {
      out.header = cells;
      first = false;
    } else {
      out.rows.push_back(cells);
    }
  }
  return out;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small but non-trivial experiment shared by the tests below.
ExperimentConfig base_config(const fs::path& work) {
  ExperimentConfig cfg;
  cfg.dataset_path = (work / "data.eff").string();
  cfg.grf.height = 6;
  cfg.grf.width = 6;
  cfg.grf.length_scale = 2.0;
  cfg.grf.day_signal_std = 0.5;
  cfg.grf.member_noise_std = 0.35;
  cfg.grf.seasonal_amplitude = 1.2;
  cfg.grf.n_days = 30;
  cfg.grf.n_members = 5;
  fields::SplitSpec split;
  split.train = {0, 22};
  split.validation = {22, 26};
  split.test = {26, 30};
  cfg.split = split;
  cfg.latent_dims = {2};
  cfg.train.hidden_width = 12;
  cfg.train.max_epochs = 8;
  cfg.train.batch_size = 0;
  cfg.weights.sd_scale = 0.15;
  cfg.weights.sd_scale_auto = false;
  cfg.metrics.sinkhorn_train_iters = 20;
  cfg.seed = 0;
  return cfg;
}

}  // namespace

TEST_CASE("synth: declared dims, byte-identical reruns, validation first") {
  const fs::path work = fresh_dir("enslat_harness_synth");
  ExperimentConfig cfg = base_config(work);

  cmd_synth(cfg);
  const fields::EnsembleDataset ds = fields::read_eff(cfg.dataset_path);
  CHECK(ds.n_days == 30);
  CHECK(ds.n_members == 5);
  CHECK(ds.height == 6);
  CHECK(ds.width == 6);

  const std::string first = slurp(cfg.dataset_path);
  cmd_synth(cfg);
  CHECK(slurp(cfg.dataset_path) == first);

  ExperimentConfig bad = cfg;
  bad.grf.n_days = 0;
  CHECK_THROWS_AS(cmd_synth(bad), std::invalid_argument);
  fs::remove_all(work);
}

TEST_CASE("train: pca persists a model with no history; ae history is well-formed") {
  const fs::path work = fresh_dir("enslat_harness_train");
  ExperimentConfig cfg = base_config(work);
  cmd_synth(cfg);

  cfg.method = "pca";
  cfg.out_dir = (work / "pca").string();
  cmd_train(cfg);
  CHECK(fs::exists(model_path(cfg.out_dir, 2)));
  CHECK(model_io::peek_kind(model_path(cfg.out_dir, 2)) == "ENSP");
  CHECK_FALSE(fs::exists(history_csv_path(cfg.out_dir, 2)));
  CHECK(fs::exists(cfg.out_dir + "/explained_variance_d2.csv"));

  cfg.method = "ae";
  cfg.out_dir = (work / "ae").string();
  cmd_train(cfg);
  CHECK(model_io::peek_kind(model_path(cfg.out_dir, 2)) == "ENSA");
  const Csv history = read_csv(history_csv_path(cfg.out_dir, 2));
  CHECK(history.rows.size() <= 8);
  double prev_best = 1e300;
  for (std::size_t i = 0; i < history.rows.size(); ++i) {
    const double best = history.num(i, "best_val");
    CHECK(best <= prev_best + 1e-15);
    prev_best = best;
  }
  fs::remove_all(work);
}

TEST_CASE("train: reruns with the same seed produce byte-identical artifacts") {
  const fs::path work = fresh_dir("enslat_harness_det");
  ExperimentConfig cfg = base_config(work);
  cmd_synth(cfg);

  for (const char* method : {"pca", "ae", "ivae"}) {
    cfg.method = method;
    cfg.out_dir = (work / (std::string("a_") + method)).string();
    cmd_train(cfg);
    const std::string model_a = slurp(model_path(cfg.out_dir, 2));

    cfg.out_dir = (work / (std::string("b_") + method)).string();
    cmd_train(cfg);
    CHECK(slurp(model_path(cfg.out_dir, 2)) == model_a);
  }
  fs::remove_all(work);
}

TEST_CASE("evaluate: row count, re-aggregation identity, skill against itself is zero") {
  const fs::path work = fresh_dir("enslat_harness_eval");
  ExperimentConfig cfg = base_config(work);
  cmd_synth(cfg);

  cfg.method = "pca";
  cfg.out_dir = (work / "pca").string();
  cmd_train(cfg);
  cmd_evaluate(cfg);

  const Csv days = read_csv(eval_csv_path(cfg.out_dir, 2));
  CHECK(days.rows.size() == 4);  // test split size

  const nlohmann::json agg = nlohmann::json::parse(slurp(eval_json_path(cfg.out_dir, 2)));
  for (const char* name : {"mean_abs_mean_diff", "ed_uni_mean", "ed_multi", "w1_uni_mean",
                           "sinkhorn", "sinkhorn_cost", "mean_std_diff"}) {
    std::vector<double> vals;
    for (std::size_t i = 0; i < days.rows.size(); ++i) vals.push_back(days.num(i, name));
    const double expect = exact_mean(vals);
    CHECK(std::fabs(agg["mean"][name].get<double>() - expect) <
          1e-12 * std::max(1.0, std::fabs(expect)));
  }

  // Evaluating the run against itself as reference gives skill 0.
  cfg.reference_dir = cfg.out_dir;
  cfg.out_dir = (work / "pca_self").string();
  fs::create_directories(cfg.out_dir);
  fs::copy_file(model_path((work / "pca").string(), 2), model_path(cfg.out_dir, 2));
  cmd_evaluate(cfg);
  const Csv self_days = read_csv(eval_csv_path(cfg.out_dir, 2));
  for (std::size_t i = 0; i < self_days.rows.size(); ++i) {
    for (const char* m : kSkillMetrics) {
      CHECK(self_days.num(i, std::string("skill_") + m) == 0.0);
    }
  }
  fs::remove_all(work);
}

TEST_CASE("evaluate: identity debug model zeroes the sample-free distances") {
  const fs::path work = fresh_dir("enslat_harness_identity");
  ExperimentConfig cfg = base_config(work);
  cmd_synth(cfg);

  cfg.method = "identity";
  cfg.out_dir = (work / "identity").string();
  cmd_evaluate(cfg);
  const Csv days = read_csv(eval_csv_path(cfg.out_dir, 2));
  CHECK(days.rows.size() == 4);
  for (std::size_t i = 0; i < days.rows.size(); ++i) {
    CHECK(days.num(i, "mean_abs_mean_diff") == 0.0);
    CHECK(days.num(i, "mean_std_diff") == 0.0);
    CHECK(days.num(i, "ed_uni_mean") == 0.0);
    CHECK(days.num(i, "ed_multi") == 0.0);
    CHECK(days.num(i, "w1_uni_mean") == 0.0);
  }
  fs::remove_all(work);
}

TEST_CASE("export-latents: row count and agreement with direct encoding") {
  const fs::path work = fresh_dir("enslat_harness_latents");
  ExperimentConfig cfg = base_config(work);
  cmd_synth(cfg);

  cfg.method = "pca";
  cfg.out_dir = (work / "pca").string();
  cmd_train(cfg);
  cfg.export_split = "all";
  cmd_export_latents(cfg);

  const Csv latents = read_csv(latents_csv_path(cfg.out_dir, 2));
  CHECK(latents.rows.size() == 30);

  // Cross-check one day against the library path.
  const fields::EnsembleDataset ds = fields::read_eff(cfg.dataset_path);
  const model_io::LoadedPca loaded = model_io::load_pca(model_path(cfg.out_dir, 2));
  const Tensor members = fields::standardize_rows(ds.day_members(7), loaded.standardizer);
  const twostep::LatentGaussian dist = twostep::fit_latent_gaussian(
      twostep::encode_members(twostep::Projector::from_pca(loaded.model), members));
  CHECK(latents.num(7, "mu_0") == doctest::Approx(dist.mean[0]).epsilon(1e-15));
  CHECK(latents.num(7, "mu_1") == doctest::Approx(dist.mean[1]).epsilon(1e-15));

  cfg.export_split = "test";
  cmd_export_latents(cfg);
  CHECK(read_csv(latents_csv_path(cfg.out_dir, 2)).rows.size() == 4);
  fs::remove_all(work);
}

TEST_CASE("ablate: one row per omega2 and a zero Sinkhorn weight in the w2=0 run") {
  const fs::path work = fresh_dir("enslat_harness_ablate");
  ExperimentConfig cfg = base_config(work);
  cfg.grf.n_days = 20;
  fields::SplitSpec split;
  split.train = {0, 14};
  split.validation = {14, 17};
  split.test = {17, 20};
  cfg.split = split;
  cmd_synth(cfg);

  cfg.method = "ivae";
  cfg.train.max_epochs = 3;
  cfg.out_dir = (work / "sweep").string();
  cfg.ablate_omega2 = {0.0, 1.0};
  cmd_ablate(cfg);

  const Csv table = read_csv(work / "sweep" / "ablation.csv");
  REQUIRE(table.rows.size() == 2);
  CHECK(table.num(0, "omega2") == 0.0);
  CHECK(table.num(0, "omega1") == 1.0);
  CHECK(table.num(1, "omega2") == 1.0);
  CHECK(std::isfinite(table.num(0, "mean_ed_multi")));
  CHECK(std::isfinite(table.num(1, "mean_sinkhorn")));

  // The w2 = 0 run's resolved config pins the Sinkhorn weight to zero.
  const nlohmann::json run_cfg =
      nlohmann::json::parse(slurp(work / "sweep" / "w2_0" / "config.resolved.json"));
  CHECK(run_cfg["loss_weights"]["w2"].get<double>() == 0.0);
  CHECK(run_cfg["loss_weights"]["w1"].get<double>() == 1.0);

  CHECK_THROWS_AS(
      [&] {
        ExperimentConfig bad = cfg;
        bad.method = "pca";
        cmd_ablate(bad);
      }(),
      std::invalid_argument);
  fs::remove_all(work);
}

TEST_CASE("evaluate round trip works for every trained method") {
  const fs::path work = fresh_dir("enslat_harness_all_methods");
  ExperimentConfig cfg = base_config(work);
  cmd_synth(cfg);

  for (const char* method : {"pca", "ae", "ivae"}) {
    cfg.method = method;
    cfg.out_dir = (work / method).string();
    cmd_train(cfg);
    cmd_evaluate(cfg);
    const Csv days = read_csv(eval_csv_path(cfg.out_dir, 2));
    CHECK(days.rows.size() == 4);
    for (std::size_t i = 0; i < days.rows.size(); ++i) {
      CHECK(days.num(i, "ed_multi") > 0.0);
      CHECK(days.num(i, "sinkhorn") >= 0.0);
      CHECK(days.num(i, "mean_input_std") > 0.0);
    }
  }
  fs::remove_all(work);
}

TEST_CASE("config file loading and overrides") {
  const fs::path work = fresh_dir("enslat_harness_config");
  const fs::path cfg_path = work / "config.json";
  {
    std::ofstream os(cfg_path);
    os << R"({
      "dataset": "data.eff",
      "method": "ae",
      "latent_dims": [2, 4],
      "split": {"train": [0, 10], "val": [10, 12], "test": [12, 14]},
      "train": {"max_epochs": 17, "hidden_width": 24},
      "loss_weights": {"sd_scale": 0.25},
      "seed": 9
    })";
  }
  ExperimentConfig cfg = load_config_file(cfg_path.string());
  CHECK(cfg.method == "ae");
  CHECK(cfg.latent_dims == std::vector<std::int64_t>{2, 4});
  CHECK(cfg.train.max_epochs == 17);
  CHECK(cfg.train.hidden_width == 24);
  CHECK(cfg.weights.sd_scale == 0.25);
  CHECK_FALSE(cfg.weights.sd_scale_auto);
  CHECK(cfg.seed == 9);
  CHECK(cfg.split->test.end == 14);

  apply_json_overrides(cfg, R"({"method": "ivae", "seed": 11})");
  CHECK(cfg.method == "ivae");
  CHECK(cfg.seed == 11);
  CHECK(cfg.train.max_epochs == 17);  // untouched keys survive

  ExperimentConfig round;
  apply_json_overrides(round, config_to_json(cfg));
  CHECK(round.method == cfg.method);
  CHECK(round.seed == cfg.seed);
  CHECK(round.train.max_epochs == cfg.train.max_epochs);
  fs::remove_all(work);
}
