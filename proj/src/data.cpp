#include "twinsight/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "twinsight/errors.hpp"

namespace twinsight {

std::size_t Dataset::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(labels.begin(), labels.end(), [](int l) { return l != kUnlabeled; }));
}

void Dataset::validate() const {
  if (features.rows < 1 || features.cols < 1) {
    throw std::invalid_argument("Dataset: need n >= 1 and d >= 1");
  }
  if (labels.size() != features.rows) {
    throw std::invalid_argument("Dataset: label count does not match row count");
  }
  for (int l : labels) {
    if (l != kUnlabeled && (l < 0 || static_cast<std::size_t>(l) >= class_count)) {
      throw std::invalid_argument("Dataset: label " + std::to_string(l) +
                                  " outside [0, " + std::to_string(class_count) + ")");
    }
  }
}

std::string designation_name(Designation d) {
  switch (d) {
    case Designation::kFullyLabeled: return "fully_labeled";
    case Designation::kFullyUnlabeled: return "fully_unlabeled";
    case Designation::kPartiallyLabeled: return "partially_labeled";
  }
  return "?";
}

Designation ClientShard::classify(const Dataset& d) {
  const std::size_t labeled = d.labeled_count();
  if (labeled == d.size()) return Designation::kFullyLabeled;
  if (labeled == 0) return Designation::kFullyUnlabeled;
  return Designation::kPartiallyLabeled;
}

void AugmentPolicy::validate() const {
  if (noise_sigma < 0.0) throw std::invalid_argument("augment: noise_sigma must be >= 0");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("augment: dropout must be in [0,1)");
  }
  if (!(0.0 < jitter_lo && jitter_lo <= 1.0 && 1.0 <= jitter_hi)) {
    throw std::invalid_argument("augment: scale jitter must satisfy 0 < lo <= 1 <= hi");
  }
}

std::vector<double> augment(std::span<const double> x, const AugmentPolicy& policy, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  if (policy.jitter_lo < policy.jitter_hi) {
    std::uniform_real_distribution<double> jitter(policy.jitter_lo, policy.jitter_hi);
    const double s = jitter(rng);
    for (double& v : out) v *= s;
  } else if (policy.jitter_lo != 1.0) {
    for (double& v : out) v *= policy.jitter_lo;
  }
  if (policy.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, policy.noise_sigma);
    for (double& v : out) v += noise(rng);
  }
  if (policy.dropout > 0.0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : out) {
      if (u(rng) < policy.dropout) v = 0.0;
    }
  }
  return out;
}

namespace {

// Largest-remainder rounding of proportions to integer counts summing to n.
std::vector<std::size_t> apportion(std::size_t n, std::span<const double> proportions) {
  const std::size_t k = proportions.size();
  std::vector<std::size_t> counts(k, 0);
  std::vector<std::pair<double, std::size_t>> remainders(k);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double exact = static_cast<double>(n) * proportions[i];
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders[i] = {exact - std::floor(exact), i};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;  // deterministic tie-break
  });
  for (std::size_t j = 0; assigned < n; ++j, ++assigned) {
    counts[remainders[j % k].second] += 1;
  }
  return counts;
}

}  // namespace

Dataset generate_blobs(std::size_t n, std::size_t classes, std::size_t dim, double spread,
                       std::uint64_t seed) {
  if (classes < 2) throw std::invalid_argument("generate_blobs: classes must be >= 2");
  if (dim < 2) throw std::invalid_argument("generate_blobs: dim must be >= 2");
  if (n < classes) throw std::invalid_argument("generate_blobs: need n >= classes");
  if (spread < 0.0) throw std::invalid_argument("generate_blobs: spread must be >= 0");

  Rng rng = make_rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  // Class means on the unit sphere.
  Matrix means(classes, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    double nrm = 0.0;
    auto row = means.row(c);
    do {
      for (double& v : row) v = unit(rng);
      nrm = norm2(row);
    } while (nrm <= 1e-12);
    for (double& v : row) v /= nrm;
  }

  // Balanced class counts within +-1.
  std::vector<std::size_t> counts(classes, n / classes);
  for (std::size_t c = 0; c < n % classes; ++c) counts[c] += 1;

  Dataset ds;
  ds.class_count = classes;
  ds.features = Matrix(n, dim);
  ds.labels.resize(n);
  std::size_t row = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    for (std::size_t i = 0; i < counts[c]; ++i, ++row) {
      auto out = ds.features.row(row);
      const auto mean = means.row(c);
      for (std::size_t j = 0; j < dim; ++j) {
        out[j] = mean[j] + (spread > 0.0 ? spread * unit(rng) : 0.0);
      }
      ds.labels[row] = static_cast<int>(c);
    }
  }

  // Shuffle rows so downstream consumers never see class-ordered data.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset shuffled;
  shuffled.class_count = classes;
  shuffled.features = Matrix(n, dim);
  shuffled.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto src = ds.features.row(order[i]);
    std::copy(src.begin(), src.end(), shuffled.features.row(i).begin());
    shuffled.labels[i] = ds.labels[order[i]];
  }
  return shuffled;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t test_count,
                                             std::uint64_t seed) {
  ds.validate();
  if (!ds.fully_labeled()) {
    throw std::invalid_argument("split_train_test: dataset must be fully labeled");
  }
  if (test_count == 0 || test_count >= ds.size()) {
    throw std::invalid_argument("split_train_test: test_count must be in (0, n)");
  }
  Rng rng = make_rng(seed);

  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  std::vector<double> proportions(ds.class_count);
  for (std::size_t c = 0; c < ds.class_count; ++c) {
    proportions[c] = static_cast<double>(by_class[c].size()) / static_cast<double>(ds.size());
  }
  const auto test_per_class = apportion(test_count, proportions);

  std::vector<std::size_t> train_rows, test_rows;
  for (std::size_t c = 0; c < ds.class_count; ++c) {
    auto& rows = by_class[c];
    std::shuffle(rows.begin(), rows.end(), rng);
    const std::size_t take = std::min(test_per_class[c], rows.size());
    test_rows.insert(test_rows.end(), rows.begin(), rows.begin() + take);
    train_rows.insert(train_rows.end(), rows.begin() + take, rows.end());
  }
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(test_rows.begin(), test_rows.end());

  auto gather = [&ds](const std::vector<std::size_t>& rows) {
    Dataset out;
    out.class_count = ds.class_count;
    out.features = Matrix(rows.size(), ds.dim());
    out.labels.resize(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto src = ds.features.row(rows[i]);
      std::copy(src.begin(), src.end(), out.features.row(i).begin());
      out.labels[i] = ds.labels[rows[i]];
    }
    return out;
  };
  return {gather(train_rows), gather(test_rows)};
}

Dataset load_csv(const std::string& path, std::size_t declared_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("load_csv: cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument("load_csv: empty file " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.rfind("label", 0) != 0) {
    throw std::invalid_argument("load_csv: line 1: header must start with 'label'");
  }
  const std::size_t dims = static_cast<std::size_t>(std::count(line.begin(), line.end(), ','));
  if (dims == 0) throw std::invalid_argument("load_csv: line 1: no feature columns declared");

  std::vector<int> labels;
  std::vector<double> values;
  std::size_t line_no = 1;
  int max_label = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (line.back() == ',') fields.push_back("");
    if (fields.size() != dims + 1) {
      throw std::invalid_argument("load_csv: line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(dims + 1) + " columns, got " +
                                  std::to_string(fields.size()));
    }
    int label = 0;
    auto [lp, lec] = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), label);
    if (lec != std::errc() || lp != fields[0].data() + fields[0].size() || label < -1) {
      throw std::invalid_argument("load_csv: line " + std::to_string(line_no) +
                                  ": bad label '" + fields[0] + "'");
    }
    labels.push_back(label);
    max_label = std::max(max_label, label);
    for (std::size_t j = 1; j < fields.size(); ++j) {
      double v = 0.0;
      auto [p, ec] = std::from_chars(fields[j].data(), fields[j].data() + fields[j].size(), v);
      if (ec != std::errc() || p != fields[j].data() + fields[j].size()) {
        throw std::invalid_argument("load_csv: line " + std::to_string(line_no) +
                                    ": bad number '" + fields[j] + "'");
      }
      values.push_back(v);
    }
  }
  if (labels.empty()) throw std::invalid_argument("load_csv: no data rows in " + path);

  Dataset ds;
  ds.class_count = declared_classes > 0 ? declared_classes
                                        : static_cast<std::size_t>(std::max(max_label, 0) + 1);
  if (declared_classes > 0 && max_label >= static_cast<int>(declared_classes)) {
    throw std::invalid_argument("load_csv: label " + std::to_string(max_label) +
                                " >= declared class count " + std::to_string(declared_classes));
  }
  ds.features.rows = labels.size();
  ds.features.cols = dims;
  ds.features.data = std::move(values);
  ds.labels = std::move(labels);
  ds.validate();
  return ds;
}

void save_csv(const Dataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::invalid_argument("save_csv: cannot open " + path + " for writing");
  out << "label";
  for (std::size_t j = 0; j < ds.dim(); ++j) out << ",f" << j;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.features.row(i)) {
      auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
      (void)ec;
      out << ',';
      out.write(buf, p - buf);
    }
    out << "\n";
  }
  if (!out) throw std::runtime_error("save_csv: write failed for " + path);
}

std::vector<ClientShard> dirichlet_partition(const Dataset& dataset, std::size_t num_clients,
                                             double gamma, std::uint64_t seed) {
  dataset.validate();
  if (!dataset.fully_labeled()) {
    throw std::invalid_argument("dirichlet_partition: dataset must be fully labeled");
  }
  if (num_clients < 1) throw std::invalid_argument("dirichlet_partition: need K >= 1");
  if (num_clients > dataset.size()) {
    throw std::invalid_argument("dirichlet_partition: K exceeds sample count");
  }
  if (!(gamma > 0.0)) throw std::invalid_argument("dirichlet_partition: gamma must be > 0");

  Rng rng = make_rng(seed);
  std::gamma_distribution<double> gamma_draw(gamma, 1.0);
  std::vector<std::vector<std::size_t>> assignment(num_clients);

  std::vector<std::vector<std::size_t>> by_class(dataset.class_count);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_class[static_cast<std::size_t>(dataset.labels[i])].push_back(i);
  }

  for (auto& rows : by_class) {
    if (rows.empty()) continue;
    std::shuffle(rows.begin(), rows.end(), rng);
    // p ~ Dirichlet(gamma * 1_K) via normalized gamma draws.
    std::vector<double> p(num_clients, 0.0);
    double sum = 0.0;
    for (double& v : p) {
      v = gamma_draw(rng);
      sum += v;
    }
    if (sum <= 0.0) {
      // All draws underflowed; concentrate the class on one client.
      p.assign(num_clients, 0.0);
      p[std::uniform_int_distribution<std::size_t>(0, num_clients - 1)(rng)] = 1.0;
      sum = 1.0;
    }
    for (double& v : p) v /= sum;
    const auto counts = apportion(rows.size(), p);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      for (std::size_t i = 0; i < counts[k]; ++i) assignment[k].push_back(rows[cursor++]);
    }
  }

  // Repair empty shards by moving one sample from the largest shard.
  for (std::size_t k = 0; k < num_clients; ++k) {
    if (!assignment[k].empty()) continue;
    std::size_t donor = 0;
    for (std::size_t j = 1; j < num_clients; ++j) {
      if (assignment[j].size() > assignment[donor].size()) donor = j;
    }
    if (assignment[donor].size() <= 1) {
      throw std::invalid_argument("dirichlet_partition: not enough samples to cover all clients");
    }
    assignment[k].push_back(assignment[donor].back());
    assignment[donor].pop_back();
  }

  std::vector<ClientShard> shards;
  shards.reserve(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    std::sort(assignment[k].begin(), assignment[k].end());
    ClientShard shard;
    shard.client_id = k;
    shard.designation = Designation::kFullyLabeled;
    shard.data.class_count = dataset.class_count;
    shard.data.features = Matrix(assignment[k].size(), dataset.dim());
    shard.data.labels.resize(assignment[k].size());
    for (std::size_t i = 0; i < assignment[k].size(); ++i) {
      const auto src = dataset.features.row(assignment[k][i]);
      std::copy(src.begin(), src.end(), shard.data.features.row(i).begin());
      shard.data.labels[i] = dataset.labels[assignment[k][i]];
    }
    shards.push_back(std::move(shard));
  }
  return shards;
}

std::vector<ClientShard> build_scenario(std::vector<ClientShard> shards, const Scenario& scenario,
                                        std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const std::size_t k = shards.size();
  if (k == 0) throw std::invalid_argument("build_scenario: no shards");

  if (scenario.mode == Scenario::Mode::kSplit) {
    const double alpha = scenario.alpha;
    if (alpha < 0.0 || alpha > 1.0) {
      throw std::invalid_argument("build_scenario: alpha must be in [0,1]");
    }
    const double exact = alpha * static_cast<double>(k);
    const double rounded = std::round(exact);
    if (std::abs(exact - rounded) > 1e-9) {
      throw std::invalid_argument("build_scenario: alpha*K = " + std::to_string(exact) +
                                  " is not an integer client count");
    }
    const std::size_t unlabeled_count = static_cast<std::size_t>(rounded);
    if (unlabeled_count == k) {
      throw std::invalid_argument("build_scenario: alpha leaves no labeled clients");
    }
    std::vector<std::size_t> ids(k);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (std::size_t i = 0; i < unlabeled_count; ++i) {
      auto& shard = shards[ids[i]];
      std::fill(shard.data.labels.begin(), shard.data.labels.end(), kUnlabeled);
      shard.designation = Designation::kFullyUnlabeled;
    }
    return shards;
  }

  const double ratio = scenario.labeled_ratio;
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("build_scenario: labeled_ratio must be in (0,1]");
  }
  for (auto& shard : shards) {
    const std::size_t n = shard.data.size();
    const std::size_t keep =
        std::min(n, static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(n))));
    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), 0);
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t i = keep; i < n; ++i) shard.data.labels[rows[i]] = kUnlabeled;
    shard.designation = ClientShard::classify(shard.data);
  }
  return shards;
}

}  // namespace twinsight
