#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <charconv>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "twinsight/data.hpp"
#include "twinsight/errors.hpp"
#include "twinsight/experiment.hpp"

using namespace twinsight;

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

bool parses_as_double(const std::string& s, double& out) {
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto res = std::from_chars(begin, end, out);
  return res.ec == std::errc{} && res.ptr == end;
}

// A config small enough for in-test experiment runs.
ExperimentConfig tiny_config(const std::string& out_dir) {
  ExperimentConfig cfg;
  cfg.dataset.train_samples = 200;
  cfg.dataset.test_samples = 60;
  cfg.dataset.dim = 8;
  cfg.clients = 5;
  cfg.gamma = 1.0;
  cfg.scenario.alpha = 0.6;  // 3 of 5 clients lose their labels
  cfg.rounds = 3;
  cfg.batch_size = 16;
  cfg.seeds = {1, 2};
  cfg.output_dir = out_dir;
  return cfg;
}

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("empty config text yields the full default configuration") {
  ExperimentConfig defaults;
  CHECK(parse_config_text("") == defaults);
  CHECK(parse_config_text("  \n\t ") == defaults);
  CHECK(parse_config_text("{}") == defaults);
}

TEST_CASE("unknown keys are hard errors naming the key") {
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"round_count": 5})"),
                       doctest::Contains("round_count"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"hyper": {"tau": 0.5}})"),
                       doctest::Contains("hyper.tau"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"dataset": {"classes": 4, "rows": 10}})"),
                       doctest::Contains("dataset.rows"), ConfigError);
}

TEST_CASE("type mismatches and constraint violations name the key") {
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"gamma": "high"})"), doctest::Contains("gamma"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"clients": 0})"), doctest::Contains("clients"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"rounds": -5})"), doctest::Contains("rounds"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"sample_rate": 1.5})"),
                       doctest::Contains("sample_rate"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"sgd": {"momentum": 1.0}})"),
                       doctest::Contains("sgd"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("not json at all"), ConfigError);
}

TEST_CASE("a fractional unlabeled-client count is rejected") {
  // alpha * clients = 5.5 with the default 10 clients.
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"scenario": {"alpha": 0.55}})"),
                       doctest::Contains("alpha"), ConfigError);
  // The same alpha is fine when it divides the client count.
  ExperimentConfig cfg =
      parse_config_text(R"({"clients": 20, "scenario": {"alpha": 0.55}})");
  CHECK(cfg.scenario.alpha == 0.55);
}

TEST_CASE("method lists parse by name and reject strangers") {
  ExperimentConfig cfg = parse_config_text(R"({"methods": ["fedavg_lower"]})");
  REQUIRE(cfg.methods.size() == 1);
  CHECK(cfg.methods[0] == Method::kFedAvgLower);
  CHECK_THROWS_AS(parse_config_text(R"({"methods": ["fedprox"]})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"methods": []})"), ConfigError);
}

TEST_CASE("seed arrays are validated") {
  ExperimentConfig cfg = parse_config_text(R"({"seeds": [7, 8]})");
  CHECK(cfg.seeds == std::vector<std::uint64_t>{7, 8});
  CHECK_THROWS_AS(parse_config_text(R"({"seeds": [1, -2]})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"seeds": "all"})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"seeds": []})"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(R"({"seeds": [1.5]})"), ConfigError);
}

TEST_CASE("target accuracy accepts null, a value in (0,1], and nothing else") {
  CHECK_FALSE(parse_config_text(R"({"target_accuracy": null})").target_accuracy.has_value());
  ExperimentConfig cfg = parse_config_text(R"({"target_accuracy": 0.5})");
  REQUIRE(cfg.target_accuracy.has_value());
  CHECK(*cfg.target_accuracy == 0.5);
  CHECK_THROWS_WITH_AS(parse_config_text(R"({"target_accuracy": 1.5})"),
                       doctest::Contains("target_accuracy"), ConfigError);
}

TEST_CASE("config serialization round-trips exactly") {
  ExperimentConfig defaults;
  CHECK(parse_config_text(config_to_json_text(defaults)) == defaults);

  ExperimentConfig custom;
  custom.dataset.train_samples = 512;
  custom.dataset.classes = 6;
  custom.dataset.spread = 0.25;
  custom.clients = 8;
  custom.gamma = 0.3;
  custom.scenario.mode = Scenario::Mode::kPartial;
  custom.scenario.labeled_ratio = 0.2;
  custom.sample_rate = 0.25;
  custom.rounds = 17;
  custom.batch_size = 32;
  custom.methods = {Method::kTwinSight, Method::kFedAvgPseudo};
  custom.hyper.lambda_u = 0.5;
  custom.hyper.temperature = 0.1;
  custom.hyper.pseudo_train_on_clean = true;
  custom.sgd.learning_rate = 0.05;
  custom.model.hidden = {32, 16};
  custom.model.embedding_dim = 8;
  custom.seeds = {11, 12, 13};
  custom.output_dir = "elsewhere";
  custom.workers = 4;
  custom.target_accuracy = 0.42;
  CHECK(parse_config_text(config_to_json_text(custom)) == custom);

  ExperimentConfig csv_cfg;
  csv_cfg.dataset.kind = DataSource::Kind::kCsv;
  csv_cfg.dataset.train_csv = "train.csv";
  csv_cfg.dataset.test_csv = "test.csv";
  CHECK(parse_config_text(config_to_json_text(csv_cfg)) == csv_cfg);
}

TEST_CASE("a small experiment writes well-formed outputs") {
  fs::path dir = temp_dir("twinsight_exp_small");
  ExperimentConfig cfg = tiny_config(dir.string());
  ExperimentSummary summary = run_experiment(cfg);

  CHECK(fs::exists(dir / "metrics.csv"));
  CHECK(fs::exists(dir / "summary.json"));
  CHECK(fs::exists(dir / "config.json"));

  // The config echo reparses to the configuration that actually ran.
  CHECK(parse_config_text(slurp(dir / "config.json")) == cfg);

  std::vector<std::string> lines;
  {
    std::istringstream all(slurp(dir / "metrics.csv"));
    std::string line;
    while (std::getline(all, line)) lines.push_back(line);
  }
  // Header plus rounds x methods x seeds rows.
  REQUIRE(lines.size() == 1 + cfg.rounds * cfg.methods.size() * cfg.seeds.size());
  CHECK(lines[0] ==
        "method,seed,round,test_acc,sup_loss,unsup_loss,align_loss,pseudo_mask_rate,"
        "probe_cos,sampled_clients");

  std::size_t row_index = 0;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    for (std::size_t s = 0; s < cfg.seeds.size(); ++s) {
      for (std::size_t r = 0; r < cfg.rounds; ++r) {
        const std::vector<std::string> f = split(lines[1 + row_index], ',');
        ++row_index;
        REQUIRE(f.size() == 10);
        CHECK(f[0] == std::string(method_name(cfg.methods[m])));
        CHECK(f[1] == std::to_string(cfg.seeds[s]));
        CHECK(f[2] == std::to_string(r + 1));  // rounds are reported 1-based
        double value = 0.0;
        CHECK(parses_as_double(f[3], value));
        CHECK(value >= 0.0);
        CHECK(value <= 1.0);
        for (int col : {4, 5, 6, 7}) CHECK(parses_as_double(f[col], value));
        if (f[8] != "undefined") CHECK(parses_as_double(f[8], value));
        CHECK(!f[9].empty());
        for (const std::string& id : split(f[9], ';')) {
          CHECK(!id.empty());
          CHECK(id.find_first_not_of("0123456789") == std::string::npos);
        }
      }
    }
  }

  // The summary on disk mirrors the returned structure.
  nlohmann::json js = nlohmann::json::parse(slurp(dir / "summary.json"));
  REQUIRE(summary.methods.size() == 3);
  for (const MethodOutcome& oc : summary.methods) {
    REQUIRE(js.contains(oc.method));
    const auto& entry = js.at(oc.method);
    CHECK(entry.at("final_acc_mean").get<double>() == doctest::Approx(oc.final_acc_mean));
    CHECK(entry.at("final_acc_std").get<double>() == doctest::Approx(oc.final_acc_std));
    if (oc.rounds_to_target) {
      CHECK(entry.at("rounds_to_target").get<std::size_t>() == *oc.rounds_to_target);
    } else {
      CHECK(entry.at("rounds_to_target").get<std::string>() == "None");
    }
    // Bookkeeping consistency: the mean of the per-seed finals.
    double mean = 0.0;
    for (double a : oc.final_accuracies) mean += a;
    mean /= static_cast<double>(oc.final_accuracies.size());
    CHECK(oc.final_acc_mean == doctest::Approx(mean).epsilon(1e-12));
    CHECK(oc.mean_history.size() == cfg.rounds);
    CHECK(oc.final_accuracies.size() == cfg.seeds.size());
  }

  // Default target resolution: the labeled-only baseline's final mean.
  for (const MethodOutcome& oc : summary.methods) {
    if (oc.method == "fedavg_lower") {
      CHECK(summary.target_accuracy == doctest::Approx(oc.final_acc_mean));
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("an unreachable target reports None for every method") {
  fs::path dir = temp_dir("twinsight_exp_target");
  ExperimentConfig cfg = tiny_config(dir.string());
  cfg.seeds = {1};
  cfg.rounds = 2;
  cfg.target_accuracy = 0.999;
  ExperimentSummary summary = run_experiment(cfg);
  CHECK(summary.target_accuracy == 0.999);
  for (const MethodOutcome& oc : summary.methods) {
    CHECK_FALSE(oc.rounds_to_target.has_value());
  }
  nlohmann::json js = nlohmann::json::parse(slurp(dir / "summary.json"));
  for (const auto& [name, entry] : js.items()) {
    CHECK(entry.at("rounds_to_target").get<std::string>() == "None");
  }
  fs::remove_all(dir);
}

TEST_CASE("identical configurations produce byte-identical metrics") {
  fs::path dir_a = temp_dir("twinsight_exp_repro_a");
  fs::path dir_b = temp_dir("twinsight_exp_repro_b");
  ExperimentConfig cfg = tiny_config(dir_a.string());
  cfg.seeds = {5};
  run_experiment(cfg);
  ExperimentConfig cfg_b = cfg;
  cfg_b.output_dir = dir_b.string();
  run_experiment(cfg_b);
  CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
  CHECK(slurp(dir_a / "summary.json") == slurp(dir_b / "summary.json"));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("csv-backed experiments load, reconcile classes and run") {
  fs::path dir = temp_dir("twinsight_exp_csv");
  fs::create_directories(dir);
  Dataset train = generate_blobs(120, 4, 6, 0.5, 91);
  for (std::size_t i = 0; i < 40; ++i) train.labels[i] = kUnlabeled;
  Dataset test = generate_blobs(40, 4, 6, 0.5, 92);
  save_csv(train, (dir / "train.csv").string());
  save_csv(test, (dir / "test.csv").string());

  ExperimentConfig cfg;
  cfg.dataset.kind = DataSource::Kind::kCsv;
  cfg.dataset.train_csv = (dir / "train.csv").string();
  cfg.dataset.test_csv = (dir / "test.csv").string();
  cfg.clients = 4;
  cfg.gamma = 1.0;
  cfg.scenario.mode = Scenario::Mode::kPartial;
  cfg.scenario.labeled_ratio = 0.5;
  cfg.rounds = 2;
  cfg.batch_size = 8;
  cfg.seeds = {3};
  cfg.methods = {Method::kFedAvgPseudo};
  cfg.output_dir = (dir / "out").string();

  // The partition needs fully labeled input; csv training data keeps its
  // unlabeled rows, which the partition rejects -- this surfaces as an error.
  CHECK_THROWS_AS(run_experiment(cfg), std::invalid_argument);

  // With a fully labeled train csv the pipeline runs end to end.
  Dataset labeled = generate_blobs(120, 4, 6, 0.5, 93);
  save_csv(labeled, (dir / "train.csv").string());
  ExperimentSummary summary = run_experiment(cfg);
  CHECK(summary.methods.size() == 1);
  CHECK(summary.methods[0].final_accuracies.size() == 1);
  fs::remove_all(dir);
}

TEST_CASE("partition stats describe every client of the first seed") {
  ExperimentConfig cfg = tiny_config("unused");
  std::string text = partition_stats_text(cfg);
  CHECK(text.find("seed 1:") != std::string::npos);
  for (std::size_t k = 0; k < cfg.clients; ++k) {
    CHECK(text.find("client " + std::to_string(k) + " ") != std::string::npos);
  }
  // alpha = 0.6 of 5 clients: exactly 3 lose their labels.
  std::size_t hidden = 0;
  std::size_t pos = 0;
  while ((pos = text.find("fully_unlabeled", pos)) != std::string::npos) {
    ++hidden;
    pos += 1;
  }
  CHECK(hidden == 3);
}
