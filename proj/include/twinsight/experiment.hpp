#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "twinsight/data.hpp"
#include "twinsight/federation.hpp"

namespace twinsight {

// Where the experiment's data comes from: synthetic Gaussian blobs (train and
// test drawn from one generation, stratified split) or a pair of CSV files.
struct DataSource {
  enum class Kind { kBlobs, kCsv };
  Kind kind = Kind::kBlobs;
  // blobs
  std::size_t train_samples = 4000;
  std::size_t test_samples = 1000;
  std::size_t classes = 4;
  std::size_t dim = 16;
  double spread = 0.6;
  // csv
  std::string train_csv;
  std::string test_csv;

  bool operator==(const DataSource&) const = default;
};

// Shared MLP shape: input -> hidden -> head. The supervised head is the
// class-count-wide classifier; the unsupervised head projects to
// embedding_dim. Both share the encoder widths, as the alignment term
// requires.
struct ModelShape {
  std::vector<std::size_t> hidden = {64};
  std::size_t embedding_dim = 16;

  bool operator==(const ModelShape&) const = default;
};

struct ExperimentConfig {
  DataSource dataset;
  std::size_t clients = 10;
  double gamma = 0.1;
  Scenario scenario;
  double sample_rate = 0.5;
  std::size_t rounds = 100;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  std::vector<Method> methods = {Method::kTwinSight, Method::kFedAvgLower,
                                 Method::kFedAvgPseudo};
  TwinHyper hyper;
  SgdConfig sgd;
  AugmentPolicy augment;
  ModelShape model;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string output_dir = "results";
  bool reproducible = true;
  std::size_t workers = 1;
  // Accuracy defining rounds_to_target. Unset: the labeled-only baseline's
  // final mean accuracy is the target.
  std::optional<double> target_accuracy;

  void validate() const;  // ConfigError naming the offending field
  bool operator==(const ExperimentConfig&) const = default;

  MlpSpec supervised_spec(std::size_t input_dim, std::size_t class_count) const;
  MlpSpec unsupervised_spec(std::size_t input_dim) const;
};

// Strict JSON parsing: unknown keys, type mismatches and constraint
// violations are ConfigErrors naming the key. An empty file (or "{}") yields
// the full-defaults config.
ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);

// Serialization used for the provenance echo; parse_config_text of the dump
// reproduces the config exactly.
std::string config_to_json_text(const ExperimentConfig& cfg);

struct MethodOutcome {
  std::string method;
  std::vector<double> final_accuracies;  // one per seed
  std::vector<double> mean_history;      // per round, averaged over seeds
  double final_acc_mean = 0.0;
  double final_acc_std = 0.0;  // population standard deviation over seeds
  std::optional<std::size_t> rounds_to_target;
  // Conflict-probe tallies across all seeds and rounds.
  std::size_t probes_defined = 0;
  std::size_t probes_negative = 0;
};

struct ExperimentSummary {
  std::vector<MethodOutcome> methods;
  double target_accuracy = 0.0;  // the resolved target, 0 when unresolvable
};

// Runs every (method, seed) cell: build data, partition, apply the label
// scenario, run `rounds` federated rounds; writes metrics.csv, summary.json
// and the resolved config.json into output_dir.
ExperimentSummary run_experiment(const ExperimentConfig& cfg);

// Per-client class histograms after partition + scenario, for the first
// configured seed (the heterogeneity diagnostic).
std::string partition_stats_text(const ExperimentConfig& cfg);

}  // namespace twinsight
