#include <cstddef>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "twinsight/errors.hpp"
#include "twinsight/experiment.hpp"
#include "twinsight/selftest.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Federated semi-supervised learning simulator (twin-model training, FedAvg "
               "baselines, gradient-conflict diagnostics)"};
  app.require_subcommand(1);

  std::string run_config, out_dir;
  std::size_t workers = 0;
  bool reproducible = false;
  auto* run = app.add_subcommand("run", "Execute the configured experiment grid");
  run->add_option("--config", run_config, "JSON experiment config")->required();
  run->add_option("--out", out_dir, "Output directory (overrides the config)");
  run->add_option("--workers", workers, "Parallel client-training workers (overrides the config)");
  run->add_flag("--reproducible", reproducible, "Force deterministic mode");

  std::string stats_config;
  auto* stats =
      app.add_subcommand("partition-stats", "Print per-client class histograms for the partition");
  stats->add_option("--config", stats_config, "JSON experiment config")->required();

  auto* self = app.add_subcommand("selftest", "Run the gradient-check and oracle suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // bad invocations count as config errors
  }

  try {
    if (run->parsed()) {
      twinsight::ExperimentConfig cfg = twinsight::parse_config(run_config);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (workers > 0) cfg.workers = workers;
      if (reproducible) cfg.reproducible = true;

      const twinsight::ExperimentSummary summary = twinsight::run_experiment(cfg);
      std::cout << "wrote " << cfg.output_dir << "/metrics.csv, summary.json, config.json\n";
      for (const auto& oc : summary.methods) {
        std::cout << oc.method << ": final_acc_mean=" << oc.final_acc_mean
                  << " final_acc_std=" << oc.final_acc_std << " rounds_to_target=";
        if (oc.rounds_to_target)
          std::cout << *oc.rounds_to_target;
        else
          std::cout << "None";
        std::cout << "\n";
      }
      return 0;
    }
    if (stats->parsed()) {
      std::cout << twinsight::partition_stats_text(twinsight::parse_config(stats_config));
      return 0;
    }
    if (self->parsed()) {
      return twinsight::run_selftest(std::cout) ? 0 : 1;
    }
  } catch (const twinsight::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const twinsight::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
