#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "enslat/harness.hpp"

namespace {

struct CliOverrides {
  std::string config_path;
  std::string method;
  std::vector<std::int64_t> latent_dims;
  std::string out;
  std::string reference;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

enslat::harness::ExperimentConfig resolve(const CliOverrides& o) {
  enslat::harness::ExperimentConfig cfg;
  if (!o.config_path.empty()) cfg = enslat::harness::load_config_file(o.config_path);
  if (!o.method.empty()) cfg.method = o.method;
  if (!o.latent_dims.empty()) cfg.latent_dims = o.latent_dims;
  if (!o.out.empty()) cfg.out_dir = o.out;
  if (!o.reference.empty()) cfg.reference_dir = o.reference;
  if (o.seed_set) cfg.seed = o.seed;
  return cfg;
}

void add_common(CLI::App* sub, CliOverrides& o) {
  sub->add_option("--config", o.config_path, "JSON config file; flags override its keys");
  sub->add_option("--method", o.method, "pca | ae | ivae | identity (evaluate only)");
  sub->add_option("--latent-dim", o.latent_dims, "latent dimension(s), repeatable");
  sub->add_option("--out", o.out, "run output directory");
  sub->add_option("--reference", o.reference, "reference run directory for skill scores");
  sub->add_option("--seed", o.seed, "root seed")->each([&o](const std::string&) { o.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"enslat: distributional representations of ensemble forecast fields"};
  app.require_subcommand(1);

  CliOverrides o;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic ensemble dataset (EFF)");
  CLI::App* train = app.add_subcommand("train", "fit a method for each latent dimension");
  CLI::App* evaluate = app.add_subcommand("evaluate", "reconstruct the test split and score it");
  CLI::App* ablate = app.add_subcommand("ablate", "sweep the Sinkhorn loss weight (iVAE)");
  CLI::App* export_latents =
      app.add_subcommand("export-latents", "write per-day latent means and sigmas to CSV");
  for (CLI::App* sub : {synth, train, evaluate, ablate, export_latents}) add_common(sub, o);

  CLI11_PARSE(app, argc, argv);

  try {
    const enslat::harness::ExperimentConfig cfg = resolve(o);
    if (synth->parsed()) {
      enslat::harness::cmd_synth(cfg);
    } else if (train->parsed()) {
      enslat::harness::cmd_train(cfg);
    } else if (evaluate->parsed()) {
      enslat::harness::cmd_evaluate(cfg);
    } else if (ablate->parsed()) {
      enslat::harness::cmd_ablate(cfg);
    } else if (export_latents->parsed()) {
      enslat::harness::cmd_export_latents(cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
