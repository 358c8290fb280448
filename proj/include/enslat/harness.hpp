#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "enslat/fields.hpp"
#include "enslat/ivae.hpp"
#include "enslat/metrics.hpp"
#include "enslat/synthgen.hpp"

namespace enslat::harness {

struct TrainSettings {
  std::int64_t hidden_width = 128;
  std::int64_t batch_size = 0;  // 0 = method default: 1024 fields (AE), 8 ensembles (iVAE)
  std::int64_t max_epochs = 200;
  int early_stop_patience = 20;
  double initial_lr = 1e-4;
  double weight_decay = 1e-4;
};

struct WeightSettings {
  double w1 = 0.5;
  double w2 = 0.5;
  double w3 = 0.01;
  double ed_scale = 2.0;
  double sd_scale = 0.02;     // used when sd_scale_auto is false
  bool sd_scale_auto = true;  // calibrate on a 20-epoch pilot run
  double kl_scale = 0.1;
  std::int64_t calibration_epochs = 20;
};

struct MetricSettings {
  double sinkhorn_eps_factor = 0.05;
  int sinkhorn_max_iters = 100;
  double sinkhorn_tol = 1e-9;
  int sinkhorn_train_iters = 50;
};

struct ExperimentConfig {
  std::string dataset_path;
  synth::GrfConfig grf;
  std::optional<fields::SplitSpec> split;  // default: 80/10/10 over the dataset
  std::string method = "pca";              // pca | ae | ivae | identity (evaluate only)
  std::vector<std::int64_t> latent_dims = {2, 4, 8, 16, 32};
  TrainSettings train;
  WeightSettings weights;
  MetricSettings metrics;
  std::vector<double> ablate_omega2 = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::string out_dir;
  std::string reference_dir;
  std::string export_split = "all";  // train | val | test | all
  std::uint64_t seed = 0;
};

ExperimentConfig load_config_file(const std::string& path);
void apply_json_overrides(ExperimentConfig& cfg, const std::string& json_text);
std::string config_to_json(const ExperimentConfig& cfg);

// Split actually used for a dataset of n_days (config value or the default).
fields::SplitSpec resolve_split(const ExperimentConfig& cfg, std::int64_t n_days);

struct DayMetrics {
  std::int64_t day_index = 0;
  std::string label;
  double mean_abs_mean_diff = 0.0;
  double mean_std_diff = 0.0;
  double mean_input_std = 0.0;
  double mean_recon_std = 0.0;
  double ed_uni_mean = 0.0;
  double ed_multi = 0.0;
  double w1_uni_mean = 0.0;
  double sinkhorn = 0.0;
  double sinkhorn_cost = 0.0;
  bool sinkhorn_converged = false;
};

// The five non-negative distance columns skill scores are computed for.
inline constexpr const char* kSkillMetrics[] = {"mean_abs_mean_diff", "ed_uni_mean", "ed_multi",
                                                "w1_uni_mean", "sinkhorn"};

struct EvalReport {
  std::vector<DayMetrics> days;
  bool has_skill = false;
  std::vector<std::array<double, 5>> day_skills;  // per day, order of kSkillMetrics
};

// All metrics for one (input, reconstruction) pair in physical units.
DayMetrics evaluate_day(const Tensor& input, const Tensor& recon, const MetricSettings& ms);

// --- CLI commands -------------------------------------------------------------

// Writes the synthetic dataset (EFF + label sidecar) to cfg.dataset_path.
void cmd_synth(const ExperimentConfig& cfg);

// Trains cfg.method for every latent dim; persists model blobs, training
// histories and (for PCA) the explained-variance table under cfg.out_dir.
void cmd_train(const ExperimentConfig& cfg);

// Reconstructs the test split day by day, computes all metrics in physical
// units and writes per-day CSV + aggregate JSON. Skill scores are added when
// cfg.reference_dir holds a matching evaluated run.
void cmd_evaluate(const ExperimentConfig& cfg);

// omega_2 sweep for the iVAE loss with omega_1 = 1 - omega_2; emits
// ablation.csv with mean test energy and Sinkhorn distances per weight.
void cmd_ablate(const ExperimentConfig& cfg);

// One row per day of the requested split: label, season, latent mean and
// per-coordinate sigma of the learned distribution.
void cmd_export_latents(const ExperimentConfig& cfg);

// --- building blocks shared with the acceptance suite --------------------------

std::string model_path(const std::string& out_dir, std::int64_t d_latent);
std::string eval_csv_path(const std::string& out_dir, std::int64_t d_latent);
std::string eval_json_path(const std::string& out_dir, std::int64_t d_latent);
std::string latents_csv_path(const std::string& out_dir, std::int64_t d_latent);
std::string history_csv_path(const std::string& out_dir, std::int64_t d_latent);

// Resolves weights (running the calibration pilot when sd_scale_auto) for a
// standardized dataset; used by cmd_train and cmd_ablate.
ivae::LossWeights resolve_loss_weights(const ExperimentConfig& cfg,
                                       const fields::EnsembleDataset& std_ds,
                                       const fields::SplitSpec& split);

}  // namespace enslat::harness
