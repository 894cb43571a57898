#include "twinsight/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string_view>

#include "json.hpp"
#include "twinsight/errors.hpp"

namespace twinsight {

namespace {

using json = nlohmann::ordered_json;

std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string qualify(const char* ctx, const std::string& key) {
  return ctx[0] == '\0' ? key : std::string(ctx) + "." + key;
}

void expect_keys(const json& obj, const char* ctx, std::initializer_list<const char*> allowed) {
  if (!obj.is_object())
    throw ConfigError((ctx[0] ? std::string(ctx) : std::string("config")) +
                      ": expected a JSON object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* k) { return it.key() == k; }) == allowed.end())
      throw ConfigError("unknown key '" + qualify(ctx, it.key()) + "'");
  }
}

template <typename T>
void read_field(const json& obj, const char* ctx, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception&) {
    throw ConfigError("key '" + qualify(ctx, key) + "': wrong value type");
  }
}

void read_count(const json& obj, const char* ctx, const char* key, std::size_t& out) {
  if (!obj.contains(key)) return;
  std::int64_t v = 0;
  try {
    obj.at(key).get_to(v);
  } catch (const json::exception&) {
    throw ConfigError("key '" + qualify(ctx, key) + "': expected an integer");
  }
  if (v < 0) throw ConfigError("key '" + qualify(ctx, key) + "': must be non-negative");
  out = static_cast<std::size_t>(v);
}

void parse_dataset(const json& obj, DataSource& out) {
  expect_keys(obj, "dataset", {"kind", "train_samples", "test_samples", "classes", "dim",
                               "spread", "train_csv", "test_csv"});
  std::string kind = out.kind == DataSource::Kind::kBlobs ? "blobs" : "csv";
  read_field(obj, "dataset", "kind", kind);
  if (kind == "blobs")
    out.kind = DataSource::Kind::kBlobs;
  else if (kind == "csv")
    out.kind = DataSource::Kind::kCsv;
  else
    throw ConfigError("key 'dataset.kind': expected \"blobs\" or \"csv\"");
  read_count(obj, "dataset", "train_samples", out.train_samples);
  read_count(obj, "dataset", "test_samples", out.test_samples);
  read_count(obj, "dataset", "classes", out.classes);
  read_count(obj, "dataset", "dim", out.dim);
  read_field(obj, "dataset", "spread", out.spread);
  read_field(obj, "dataset", "train_csv", out.train_csv);
  read_field(obj, "dataset", "test_csv", out.test_csv);
}

void parse_scenario(const json& obj, Scenario& out) {
  expect_keys(obj, "scenario", {"mode", "alpha", "labeled_ratio"});
  std::string mode = out.mode == Scenario::Mode::kSplit ? "split" : "partial";
  read_field(obj, "scenario", "mode", mode);
  if (mode == "split")
    out.mode = Scenario::Mode::kSplit;
  else if (mode == "partial")
    out.mode = Scenario::Mode::kPartial;
  else
    throw ConfigError("key 'scenario.mode': expected \"split\" or \"partial\"");
  read_field(obj, "scenario", "alpha", out.alpha);
  read_field(obj, "scenario", "labeled_ratio", out.labeled_ratio);
}

ExperimentConfig parse_json(const json& root) {
  ExperimentConfig cfg;
  expect_keys(root, "",
              {"dataset", "clients", "gamma", "scenario", "sample_rate", "rounds",
               "local_epochs", "batch_size", "methods", "hyper", "sgd", "augment", "model",
               "seeds", "output_dir", "reproducible", "workers", "target_accuracy"});

  if (root.contains("dataset")) parse_dataset(root.at("dataset"), cfg.dataset);
  read_count(root, "", "clients", cfg.clients);
  read_field(root, "", "gamma", cfg.gamma);
  if (root.contains("scenario")) parse_scenario(root.at("scenario"), cfg.scenario);
  read_field(root, "", "sample_rate", cfg.sample_rate);
  read_count(root, "", "rounds", cfg.rounds);
  read_count(root, "", "local_epochs", cfg.local_epochs);
  read_count(root, "", "batch_size", cfg.batch_size);

  if (root.contains("methods")) {
    std::vector<std::string> names;
    read_field(root, "", "methods", names);
    cfg.methods.clear();
    for (const auto& n : names) cfg.methods.push_back(method_from_name(n));
  }

  if (root.contains("hyper")) {
    const json& h = root.at("hyper");
    expect_keys(h, "hyper", {"lambda_u", "lambda_d", "temperature", "confidence_threshold",
                             "alignment_mean", "pseudo_train_on_clean"});
    read_field(h, "hyper", "lambda_u", cfg.hyper.lambda_u);
    read_field(h, "hyper", "lambda_d", cfg.hyper.lambda_d);
    read_field(h, "hyper", "temperature", cfg.hyper.temperature);
    read_field(h, "hyper", "confidence_threshold", cfg.hyper.confidence_threshold);
    read_field(h, "hyper", "alignment_mean", cfg.hyper.alignment_mean);
    read_field(h, "hyper", "pseudo_train_on_clean", cfg.hyper.pseudo_train_on_clean);
  }
  if (root.contains("sgd")) {
    const json& s = root.at("sgd");
    expect_keys(s, "sgd", {"learning_rate", "momentum", "weight_decay"});
    read_field(s, "sgd", "learning_rate", cfg.sgd.learning_rate);
    read_field(s, "sgd", "momentum", cfg.sgd.momentum);
    read_field(s, "sgd", "weight_decay", cfg.sgd.weight_decay);
  }
  if (root.contains("augment")) {
    const json& a = root.at("augment");
    expect_keys(a, "augment", {"noise_sigma", "dropout", "jitter_lo", "jitter_hi"});
    read_field(a, "augment", "noise_sigma", cfg.augment.noise_sigma);
    read_field(a, "augment", "dropout", cfg.augment.dropout);
    read_field(a, "augment", "jitter_lo", cfg.augment.jitter_lo);
    read_field(a, "augment", "jitter_hi", cfg.augment.jitter_hi);
  }
  if (root.contains("model")) {
    const json& m = root.at("model");
    expect_keys(m, "model", {"hidden", "embedding_dim"});
    if (m.contains("hidden")) {
      std::vector<std::int64_t> hidden;
      read_field(m, "model", "hidden", hidden);
      cfg.model.hidden.clear();
      for (std::int64_t h : hidden) {
        if (h < 1) throw ConfigError("key 'model.hidden': widths must be >= 1");
        cfg.model.hidden.push_back(static_cast<std::size_t>(h));
      }
    }
    read_count(m, "model", "embedding_dim", cfg.model.embedding_dim);
  }

  if (root.contains("seeds")) {
    const json& s = root.at("seeds");
    if (!s.is_array()) throw ConfigError("key 'seeds': expected an array of integers");
    cfg.seeds.clear();
    for (const auto& v : s) {
      if (!v.is_number_integer() && !v.is_number_unsigned())
        throw ConfigError("key 'seeds': expected an array of integers");
      if (v.is_number_integer() && v.get<std::int64_t>() < 0)
        throw ConfigError("key 'seeds': seeds must be non-negative");
      cfg.seeds.push_back(v.get<std::uint64_t>());
    }
  }
  read_field(root, "", "output_dir", cfg.output_dir);
  read_field(root, "", "reproducible", cfg.reproducible);
  read_count(root, "", "workers", cfg.workers);
  if (root.contains("target_accuracy") && !root.at("target_accuracy").is_null()) {
    double t = 0.0;
    read_field(root, "", "target_accuracy", t);
    cfg.target_accuracy = t;
  }

  cfg.validate();
  return cfg;
}

MethodConfig method_config_for(const ExperimentConfig& cfg, Method m) {
  MethodConfig mc;
  mc.method = m;
  mc.local_epochs = cfg.local_epochs;
  mc.batch_size = cfg.batch_size;
  mc.hyper = cfg.hyper;
  mc.sgd = cfg.sgd;
  mc.augment = cfg.augment;
  return mc;
}

struct SeedData {
  Dataset train;
  Dataset test;
  std::vector<ClientShard> shards;
  GlobalState init;
};

// Everything a (method, seed) cell starts from. Derived from the seed alone,
// so every method sees identical data, partition and initial weights.
SeedData build_seed_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedData out;
  if (cfg.dataset.kind == DataSource::Kind::kBlobs) {
    const Dataset full =
        generate_blobs(cfg.dataset.train_samples + cfg.dataset.test_samples, cfg.dataset.classes,
                       cfg.dataset.dim, cfg.dataset.spread, derive_seed(seed, stream_tag::kData));
    auto [train, test] =
        split_train_test(full, cfg.dataset.test_samples, derive_seed(seed, stream_tag::kData, 1));
    out.train = std::move(train);
    out.test = std::move(test);
  } else {
    out.train = load_csv(cfg.dataset.train_csv);
    out.test = load_csv(cfg.dataset.test_csv);
    const std::size_t classes = std::max(out.train.class_count, out.test.class_count);
    out.train.class_count = classes;
    out.test.class_count = classes;
    if (!out.test.fully_labeled())
      throw ConfigError("key 'dataset.test_csv': the test set must be fully labeled");
  }

  out.shards = dirichlet_partition(out.train, cfg.clients, cfg.gamma,
                                   derive_seed(seed, stream_tag::kPartition));
  out.shards = build_scenario(std::move(out.shards), cfg.scenario,
                              derive_seed(seed, stream_tag::kScenario));

  const MlpSpec sup = cfg.supervised_spec(out.train.dim(), out.train.class_count);
  const MlpSpec uns = cfg.unsupervised_spec(out.train.dim());
  Rng rs = make_rng(derive_seed(seed, stream_tag::kInitSup));
  Rng ru = make_rng(derive_seed(seed, stream_tag::kInitUnsup));
  out.init.supervised = ModelParams::random_init(sup, rs);
  out.init.unsupervised = ModelParams::random_init(uns, ru);
  out.init.round = 0;
  return out;
}

void write_csv_row(std::ostream& os, std::string_view method, std::uint64_t seed,
                   const RoundReport& r) {
  os << method << ',' << seed << ',' << r.round << ',' << fmt_double(r.test_accuracy) << ','
     << fmt_double(r.losses.supervised) << ',' << fmt_double(r.losses.unsupervised) << ','
     << fmt_double(r.losses.alignment) << ',' << fmt_double(r.losses.pseudo_mask_rate) << ',';
  os << (r.probe_cosine ? fmt_double(*r.probe_cosine) : std::string("undefined"));
  os << ',';
  for (std::size_t i = 0; i < r.sampled_clients.size(); ++i) {
    if (i) os << ';';
    os << r.sampled_clients[i];
  }
  os << '\n';
}

}  // namespace

void ExperimentConfig::validate() const {
  if (clients < 1) throw ConfigError("key 'clients': must be >= 1");
  if (!(gamma > 0.0)) throw ConfigError("key 'gamma': must be > 0");
  if (!(sample_rate > 0.0) || sample_rate > 1.0)
    throw ConfigError("key 'sample_rate': must lie in (0, 1]");
  if (rounds < 1) throw ConfigError("key 'rounds': must be >= 1");
  if (local_epochs < 1) throw ConfigError("key 'local_epochs': must be >= 1");
  if (batch_size < 2) throw ConfigError("key 'batch_size': must be >= 2");
  if (methods.empty()) throw ConfigError("key 'methods': at least one method required");
  if (seeds.empty()) throw ConfigError("key 'seeds': at least one seed required");
  if (output_dir.empty()) throw ConfigError("key 'output_dir': must not be empty");
  if (workers < 1) throw ConfigError("key 'workers': must be >= 1");
  if (model.embedding_dim < 1) throw ConfigError("key 'model.embedding_dim': must be >= 1");

  if (dataset.kind == DataSource::Kind::kBlobs) {
    if (dataset.train_samples < 1) throw ConfigError("key 'dataset.train_samples': must be >= 1");
    if (dataset.test_samples < 1) throw ConfigError("key 'dataset.test_samples': must be >= 1");
    if (dataset.classes < 2) throw ConfigError("key 'dataset.classes': must be >= 2");
    if (dataset.dim < 1) throw ConfigError("key 'dataset.dim': must be >= 1");
    if (!(dataset.spread > 0.0)) throw ConfigError("key 'dataset.spread': must be > 0");
  } else {
    if (dataset.train_csv.empty()) throw ConfigError("key 'dataset.train_csv': path required");
    if (dataset.test_csv.empty()) throw ConfigError("key 'dataset.test_csv': path required");
  }

  if (scenario.mode == Scenario::Mode::kSplit) {
    if (!(scenario.alpha >= 0.0) || scenario.alpha >= 1.0)
      throw ConfigError("key 'scenario.alpha': must lie in [0, 1)");
    const double t = scenario.alpha * static_cast<double>(clients);
    if (std::abs(t - std::round(t)) > 1e-9)
      throw ConfigError("key 'scenario.alpha': alpha * clients must be an integer (got " +
                        fmt_double(t) + ")");
  } else {
    if (!(scenario.labeled_ratio > 0.0) || scenario.labeled_ratio > 1.0)
      throw ConfigError("key 'scenario.labeled_ratio': must lie in (0, 1]");
  }

  if (target_accuracy && (!(*target_accuracy > 0.0) || *target_accuracy > 1.0))
    throw ConfigError("key 'target_accuracy': must lie in (0, 1]");

  try {
    hyper.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("key 'hyper': ") + e.what());
  }
  try {
    sgd.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("key 'sgd': ") + e.what());
  }
  try {
    augment.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("key 'augment': ") + e.what());
  }
}

MlpSpec ExperimentConfig::supervised_spec(std::size_t input_dim, std::size_t class_count) const {
  MlpSpec spec;
  spec.widths.push_back(input_dim);
  spec.widths.insert(spec.widths.end(), model.hidden.begin(), model.hidden.end());
  spec.widths.push_back(class_count);
  spec.activation = Activation::kRelu;
  spec.head = HeadKind::kClassifier;
  return spec;
}

MlpSpec ExperimentConfig::unsupervised_spec(std::size_t input_dim) const {
  MlpSpec spec;
  spec.widths.push_back(input_dim);
  spec.widths.insert(spec.widths.end(), model.hidden.begin(), model.hidden.end());
  spec.widths.push_back(model.embedding_dim);
  spec.activation = Activation::kRelu;
  spec.head = HeadKind::kEmbedding;
  return spec;
}

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

ExperimentConfig parse_config_text(const std::string& text) {
  const auto non_space = text.find_first_not_of(" \t\r\n");
  if (non_space == std::string::npos) {
    ExperimentConfig cfg;
    cfg.validate();
    return cfg;
  }
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_json(root);
}

std::string config_to_json_text(const ExperimentConfig& cfg) {
  json root;
  json ds;
  ds["kind"] = cfg.dataset.kind == DataSource::Kind::kBlobs ? "blobs" : "csv";
  if (cfg.dataset.kind == DataSource::Kind::kBlobs) {
    ds["train_samples"] = cfg.dataset.train_samples;
    ds["test_samples"] = cfg.dataset.test_samples;
    ds["classes"] = cfg.dataset.classes;
    ds["dim"] = cfg.dataset.dim;
    ds["spread"] = cfg.dataset.spread;
  } else {
    ds["train_csv"] = cfg.dataset.train_csv;
    ds["test_csv"] = cfg.dataset.test_csv;
  }
  root["dataset"] = ds;
  root["clients"] = cfg.clients;
  root["gamma"] = cfg.gamma;
  json sc;
  sc["mode"] = cfg.scenario.mode == Scenario::Mode::kSplit ? "split" : "partial";
  sc["alpha"] = cfg.scenario.alpha;
  sc["labeled_ratio"] = cfg.scenario.labeled_ratio;
  root["scenario"] = sc;
  root["sample_rate"] = cfg.sample_rate;
  root["rounds"] = cfg.rounds;
  root["local_epochs"] = cfg.local_epochs;
  root["batch_size"] = cfg.batch_size;
  json methods = json::array();
  for (Method m : cfg.methods) methods.push_back(std::string(method_name(m)));
  root["methods"] = methods;
  root["hyper"] = {{"lambda_u", cfg.hyper.lambda_u},
                   {"lambda_d", cfg.hyper.lambda_d},
                   {"temperature", cfg.hyper.temperature},
                   {"confidence_threshold", cfg.hyper.confidence_threshold},
                   {"alignment_mean", cfg.hyper.alignment_mean},
                   {"pseudo_train_on_clean", cfg.hyper.pseudo_train_on_clean}};
  root["sgd"] = {{"learning_rate", cfg.sgd.learning_rate},
                 {"momentum", cfg.sgd.momentum},
                 {"weight_decay", cfg.sgd.weight_decay}};
  root["augment"] = {{"noise_sigma", cfg.augment.noise_sigma},
                     {"dropout", cfg.augment.dropout},
                     {"jitter_lo", cfg.augment.jitter_lo},
                     {"jitter_hi", cfg.augment.jitter_hi}};
  root["model"] = {{"hidden", cfg.model.hidden}, {"embedding_dim", cfg.model.embedding_dim}};
  root["seeds"] = cfg.seeds;
  root["output_dir"] = cfg.output_dir;
  root["reproducible"] = cfg.reproducible;
  root["workers"] = cfg.workers;
  if (cfg.target_accuracy)
    root["target_accuracy"] = *cfg.target_accuracy;
  else
    root["target_accuracy"] = nullptr;
  return root.dump(2) + "\n";
}

ExperimentSummary run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);

  {
    std::ofstream echo(fs::path(cfg.output_dir) / "config.json", std::ios::binary);
    if (!echo) throw std::runtime_error("cannot write config echo in " + cfg.output_dir);
    echo << config_to_json_text(cfg);
  }

  std::ofstream csv(fs::path(cfg.output_dir) / "metrics.csv", std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write metrics.csv in " + cfg.output_dir);
  csv << "method,seed,round,test_acc,sup_loss,unsup_loss,align_loss,pseudo_mask_rate,"
         "probe_cos,sampled_clients\n";

  ExperimentSummary summary;
  for (Method method : cfg.methods) {
    MethodOutcome outcome;
    outcome.method = std::string(method_name(method));
    std::vector<std::vector<double>> histories;

    for (std::uint64_t seed : cfg.seeds) {
      const SeedData sd = build_seed_data(cfg, seed);
      GlobalState state = sd.init;

      RoundOptions opts;
      opts.method = method_config_for(cfg, method);
      opts.sample_rate = cfg.sample_rate;
      opts.base_seed = seed;
      opts.workers = cfg.workers;

      std::vector<double> history;
      history.reserve(cfg.rounds);
      for (std::size_t r = 0; r < cfg.rounds; ++r) {
        RoundReport report;
        try {
          auto [next_state, rep] = run_round(state, sd.shards, sd.test, opts);
          state = std::move(next_state);
          report = std::move(rep);
        } catch (const NumericError& e) {
          throw NumericError(outcome.method + " seed " + std::to_string(seed) + " round " +
                             std::to_string(r + 1) + ": " + e.what());
        }
        write_csv_row(csv, outcome.method, seed, report);
        history.push_back(report.test_accuracy);
        if (report.probe_cosine) {
          ++outcome.probes_defined;
          if (*report.probe_cosine < 0.0) ++outcome.probes_negative;
        }
      }
      outcome.final_accuracies.push_back(history.back());
      histories.push_back(std::move(history));
    }

    outcome.mean_history.assign(cfg.rounds, 0.0);
    for (const auto& h : histories) {
      for (std::size_t r = 0; r < cfg.rounds; ++r) outcome.mean_history[r] += h[r];
    }
    for (double& v : outcome.mean_history) v /= static_cast<double>(histories.size());

    double mean = 0.0;
    for (double a : outcome.final_accuracies) mean += a;
    mean /= static_cast<double>(outcome.final_accuracies.size());
    double var = 0.0;
    for (double a : outcome.final_accuracies) var += (a - mean) * (a - mean);
    var /= static_cast<double>(outcome.final_accuracies.size());
    outcome.final_acc_mean = mean;
    outcome.final_acc_std = std::sqrt(var);
    summary.methods.push_back(std::move(outcome));
  }
  csv.close();

  double target = 0.0;
  if (cfg.target_accuracy) {
    target = *cfg.target_accuracy;
  } else {
    for (const auto& oc : summary.methods) {
      if (oc.method == method_name(Method::kFedAvgLower)) target = oc.final_acc_mean;
    }
  }
  summary.target_accuracy = target;
  for (auto& oc : summary.methods) {
    oc.rounds_to_target = (target > 0.0 && target <= 1.0)
                              ? rounds_to_target(oc.mean_history, target)
                              : std::nullopt;
  }

  json js;
  for (const auto& oc : summary.methods) {
    json entry;
    entry["final_acc_mean"] = oc.final_acc_mean;
    entry["final_acc_std"] = oc.final_acc_std;
    if (oc.rounds_to_target)
      entry["rounds_to_target"] = *oc.rounds_to_target;
    else
      entry["rounds_to_target"] = "None";
    js[oc.method] = entry;
  }
  std::ofstream sj(fs::path(cfg.output_dir) / "summary.json", std::ios::binary);
  if (!sj) throw std::runtime_error("cannot write summary.json in " + cfg.output_dir);
  sj << js.dump(2) << "\n";

  return summary;
}

std::string partition_stats_text(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::uint64_t seed = cfg.seeds.front();

  Dataset train;
  if (cfg.dataset.kind == DataSource::Kind::kBlobs) {
    const Dataset full =
        generate_blobs(cfg.dataset.train_samples + cfg.dataset.test_samples, cfg.dataset.classes,
                       cfg.dataset.dim, cfg.dataset.spread, derive_seed(seed, stream_tag::kData));
    train = split_train_test(full, cfg.dataset.test_samples,
                             derive_seed(seed, stream_tag::kData, 1))
                .first;
  } else {
    train = load_csv(cfg.dataset.train_csv);
  }

  const auto before = dirichlet_partition(train, cfg.clients, cfg.gamma,
                                          derive_seed(seed, stream_tag::kPartition));
  const auto after =
      build_scenario(before, cfg.scenario, derive_seed(seed, stream_tag::kScenario));

  std::ostringstream os;
  os << "seed " << seed << ": " << cfg.clients << " clients, " << train.class_count
     << " classes, gamma " << fmt_double(cfg.gamma) << "\n";
  for (std::size_t k = 0; k < before.size(); ++k) {
    std::vector<std::size_t> hist(train.class_count, 0);
    for (int label : before[k].data.labels) {
      if (label != kUnlabeled) ++hist[static_cast<std::size_t>(label)];
    }
    os << "client " << before[k].client_id << " | n=" << before[k].data.size() << " | "
       << designation_name(after[k].designation) << " | labeled " << after[k].data.labeled_count()
       << " | class counts:";
    for (std::size_t c = 0; c < hist.size(); ++c) os << ' ' << hist[c];
    os << "\n";
  }
  return os.str();
}

}  // namespace twinsight
