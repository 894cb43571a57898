#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "twinsight/data.hpp"
#include "twinsight/matrix.hpp"
#include "twinsight/rng.hpp"

using namespace twinsight;

namespace {

// One sortable record per sample so exact-cover checks can compare multisets.
using RowKey = std::pair<std::vector<double>, int>;

std::vector<RowKey> row_multiset(const Dataset& ds) {
  std::vector<RowKey> keys;
  keys.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.features.row(i);
    keys.emplace_back(std::vector<double>(row.begin(), row.end()), ds.labels[i]);
  }
  std::sort(keys.begin(), keys.end());
  return keys;
}

std::vector<std::size_t> class_histogram(const Dataset& ds) {
  std::vector<std::size_t> counts(ds.class_count, 0);
  for (int y : ds.labels) {
    if (y >= 0) ++counts[static_cast<std::size_t>(y)];
  }
  return counts;
}

std::filesystem::path temp_csv(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("blobs are balanced, labeled and reproducible") {
  Dataset ds = generate_blobs(100, 4, 8, 0.5, 42);
  CHECK(ds.size() == 100);
  CHECK(ds.dim() == 8);
  CHECK(ds.class_count == 4);
  CHECK(ds.fully_labeled());
  std::vector<std::size_t> counts = class_histogram(ds);
  for (std::size_t c : counts) CHECK(c == 25);

  Dataset again = generate_blobs(100, 4, 8, 0.5, 42);
  CHECK(ds == again);
  Dataset other = generate_blobs(100, 4, 8, 0.5, 43);
  CHECK(ds.features != other.features);
}

TEST_CASE("blob class sizes stay within one of each other when n is not divisible") {
  Dataset ds = generate_blobs(103, 4, 8, 0.5, 7);
  std::vector<std::size_t> counts = class_histogram(ds);
  auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  CHECK(*hi - *lo <= 1);
  CHECK(counts[0] + counts[1] + counts[2] + counts[3] == 103);
}

TEST_CASE("zero spread collapses every sample onto its class mean") {
  Dataset ds = generate_blobs(40, 4, 6, 0.0, 11);
  std::map<int, std::vector<double>> mean;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.features.row(i);
    std::vector<double> v(row.begin(), row.end());
    auto [it, inserted] = mean.emplace(ds.labels[i], v);
    if (!inserted) CHECK(it->second == v);  // identical to the first sight of the class
  }
  CHECK(mean.size() == 4);
  // The class means themselves are pairwise distinct.
  for (auto a = mean.begin(); a != mean.end(); ++a) {
    for (auto b = std::next(a); b != mean.end(); ++b) {
      CHECK(a->second != b->second);
    }
  }
}

TEST_CASE("small spread keeps samples nearest their own class centroid") {
  Dataset ds = generate_blobs(200, 4, 16, 0.05, 3);
  std::vector<std::vector<double>> centroid(4, std::vector<double>(16, 0.0));
  std::vector<std::size_t> counts(4, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.features.row(i);
    auto& c = centroid[static_cast<std::size_t>(ds.labels[i])];
    for (std::size_t d = 0; d < 16; ++d) c[d] += row[d];
    ++counts[static_cast<std::size_t>(ds.labels[i])];
  }
  for (std::size_t k = 0; k < 4; ++k) {
    for (double& v : centroid[k]) v /= static_cast<double>(counts[k]);
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto row = ds.features.row(i);
    int best = -1;
    double best_dist = 0.0;
    for (int k = 0; k < 4; ++k) {
      double dist = 0.0;
      for (std::size_t d = 0; d < 16; ++d) {
        double delta = row[d] - centroid[static_cast<std::size_t>(k)][d];
        dist += delta * delta;
      }
      if (best < 0 || dist < best_dist) {
        best = k;
        best_dist = dist;
      }
    }
    CHECK(best == ds.labels[i]);
  }
}

TEST_CASE("blob generation rejects degenerate shapes") {
  CHECK_THROWS_AS(generate_blobs(10, 1, 8, 0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_blobs(10, 4, 1, 0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_blobs(3, 4, 8, 0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(generate_blobs(10, 4, 8, -0.1, 1), std::invalid_argument);
}

TEST_CASE("train/test split is stratified, disjoint and covering") {
  Dataset ds = generate_blobs(100, 4, 8, 0.5, 5);
  auto [train, test] = split_train_test(ds, 20, 9);
  CHECK(train.size() == 80);
  CHECK(test.size() == 20);
  CHECK(train.fully_labeled());
  CHECK(test.fully_labeled());
  CHECK(train.class_count == 4);
  CHECK(test.class_count == 4);

  // Balanced input, largest-remainder allocation: exactly 5 per class.
  std::vector<std::size_t> test_counts = class_histogram(test);
  for (std::size_t c : test_counts) CHECK(c == 5);

  // The two halves partition the original multiset of rows exactly.
  std::vector<RowKey> combined = row_multiset(train);
  std::vector<RowKey> test_rows = row_multiset(test);
  combined.insert(combined.end(), test_rows.begin(), test_rows.end());
  std::sort(combined.begin(), combined.end());
  CHECK(combined == row_multiset(ds));
}

TEST_CASE("train/test split validates its inputs") {
  Dataset ds = generate_blobs(50, 4, 8, 0.5, 5);
  CHECK_THROWS_AS(split_train_test(ds, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(split_train_test(ds, 50, 1), std::invalid_argument);
  Dataset partial = ds;
  partial.labels[0] = kUnlabeled;
  CHECK_THROWS_AS(split_train_test(partial, 10, 1), std::invalid_argument);
}

TEST_CASE("csv loading parses labels, features and the unlabeled sentinel") {
  auto path = temp_csv("twinsight_basic.csv");
  {
    std::ofstream out(path);
    out << "label,f0,f1\n"
        << "0,1.5,-2.25\n"
        << "-1,0.0,3.0\n"
        << "2,0.125,7.0\n";
  }
  Dataset ds = load_csv(path.string());
  CHECK(ds.size() == 3);
  CHECK(ds.dim() == 2);
  CHECK(ds.class_count == 3);  // inferred max(label) + 1
  CHECK(ds.labels == std::vector<int>{0, kUnlabeled, 2});
  CHECK(ds.features.at(0, 0) == 1.5);
  CHECK(ds.features.at(0, 1) == -2.25);
  CHECK(ds.features.at(1, 1) == 3.0);
  CHECK(ds.labeled_count() == 2);
  std::filesystem::remove(path);
}

TEST_CASE("csv save/load round-trips a dataset exactly") {
  Dataset ds = generate_blobs(30, 4, 5, 0.7, 21);
  ds.labels[3] = kUnlabeled;
  ds.labels[17] = kUnlabeled;
  auto path = temp_csv("twinsight_roundtrip.csv");
  save_csv(ds, path.string());
  Dataset back = load_csv(path.string(), ds.class_count);
  CHECK(back == ds);
  std::filesystem::remove(path);
}

TEST_CASE("csv loader reports the offending line") {
  auto path = temp_csv("twinsight_bad.csv");
  {
    std::ofstream out(path);
    out << "label,f0,f1\n"
        << "0,1.0,2.0\n"
        << "1,3.0\n";  // wrong column count
  }
  CHECK_THROWS_WITH_AS(load_csv(path.string()), doctest::Contains("line 3"),
                       std::invalid_argument);
  {
    std::ofstream out(path);
    out << "label,f0\n"
        << "zero,1.0\n";
  }
  CHECK_THROWS_WITH_AS(load_csv(path.string()), doctest::Contains("line 2"),
                       std::invalid_argument);
  {
    std::ofstream out(path);
    out << "label,f0\n";
  }
  CHECK_THROWS_AS(load_csv(path.string()), std::invalid_argument);
  {
    std::ofstream out(path);  // empty file
  }
  CHECK_THROWS_AS(load_csv(path.string()), std::invalid_argument);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_csv(path.string()), std::invalid_argument);  // missing file
}

TEST_CASE("csv loader rejects labels above the declared class count") {
  auto path = temp_csv("twinsight_declared.csv");
  {
    std::ofstream out(path);
    out << "label,f0\n"
        << "5,1.0\n";
  }
  CHECK_THROWS_AS(load_csv(path.string(), 3), std::invalid_argument);
  CHECK(load_csv(path.string(), 6).class_count == 6);
  std::filesystem::remove(path);
}

TEST_CASE("augmentation with a neutral policy is the identity") {
  AugmentPolicy neutral{.noise_sigma = 0.0, .dropout = 0.0, .jitter_lo = 1.0, .jitter_hi = 1.0};
  Rng rng = make_rng(1);
  std::vector<double> x{1.0, -2.0, 0.5, 3.25};
  CHECK(augment(x, neutral, rng) == x);
}

TEST_CASE("augmentation is reproducible and actually perturbs") {
  AugmentPolicy policy;
  std::vector<double> x(32, 1.0);
  Rng a = make_rng(77);
  Rng b = make_rng(77);
  std::vector<double> va = augment(x, policy, a);
  std::vector<double> vb = augment(x, policy, b);
  CHECK(va == vb);
  CHECK(va != x);
}

TEST_CASE("dropout zeroes roughly its configured fraction of features") {
  AugmentPolicy policy{.noise_sigma = 0.0, .dropout = 0.5, .jitter_lo = 1.0, .jitter_hi = 1.0};
  Rng rng = make_rng(31);
  std::size_t zeros = 0;
  const std::size_t total = 20000;
  std::vector<double> x(total, 1.0);
  std::vector<double> y = augment(x, policy, rng);
  for (double v : y) {
    if (v == 0.0) ++zeros;
  }
  double frac = static_cast<double>(zeros) / static_cast<double>(total);
  CHECK(frac > 0.45);
  CHECK(frac < 0.55);
}

TEST_CASE("augmentation policy validation") {
  CHECK_NOTHROW(AugmentPolicy{}.validate());
  CHECK_THROWS_AS((AugmentPolicy{.noise_sigma = -0.1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AugmentPolicy{.dropout = 1.0}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AugmentPolicy{.jitter_lo = 1.1}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((AugmentPolicy{.jitter_hi = 0.9}.validate()), std::invalid_argument);
}

TEST_CASE("dirichlet partition with one client holds everything") {
  Dataset ds = generate_blobs(60, 4, 6, 0.5, 13);
  std::vector<ClientShard> shards = dirichlet_partition(ds, 1, 0.5, 99);
  REQUIRE(shards.size() == 1);
  CHECK(shards[0].client_id == 0);
  CHECK(shards[0].data.size() == 60);
  CHECK(row_multiset(shards[0].data) == row_multiset(ds));
}

TEST_CASE("dirichlet partition is an exact disjoint cover with no empty shard") {
  Dataset ds = generate_blobs(500, 4, 6, 0.5, 17);
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    for (double gamma : {0.1, 1.0, 100.0}) {
      std::vector<ClientShard> shards = dirichlet_partition(ds, 10, gamma, seed);
      REQUIRE(shards.size() == 10);
      std::vector<RowKey> combined;
      for (std::size_t k = 0; k < shards.size(); ++k) {
        CHECK(shards[k].client_id == k);
        CHECK(shards[k].data.size() >= 1);
        CHECK(shards[k].data.class_count == 4);
        std::vector<RowKey> rows = row_multiset(shards[k].data);
        combined.insert(combined.end(), rows.begin(), rows.end());
      }
      std::sort(combined.begin(), combined.end());
      CHECK(combined == row_multiset(ds));
    }
  }
}

TEST_CASE("huge gamma yields near-uniform class proportions per client") {
  Dataset ds = generate_blobs(2000, 4, 4, 0.5, 23);
  double worst = 0.0;
  int trials = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::vector<ClientShard> shards = dirichlet_partition(ds, 10, 1e6, seed);
    for (const ClientShard& s : shards) {
      std::vector<std::size_t> counts = class_histogram(s.data);
      double n = static_cast<double>(s.data.size());
      for (std::size_t c : counts) {
        worst = std::max(worst, std::abs(static_cast<double>(c) / n - 0.25));
      }
      ++trials;
    }
  }
  CHECK(trials == 50);
  CHECK(worst < 0.05);
}

TEST_CASE("small gamma concentrates classes within clients") {
  Dataset ds = generate_blobs(2000, 4, 4, 0.5, 29);
  double share_sum = 0.0;
  std::size_t shard_count = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    std::vector<ClientShard> shards = dirichlet_partition(ds, 10, 0.1, seed);
    for (const ClientShard& s : shards) {
      std::vector<std::size_t> counts = class_histogram(s.data);
      std::size_t largest = *std::max_element(counts.begin(), counts.end());
      share_sum += static_cast<double>(largest) / static_cast<double>(s.data.size());
      ++shard_count;
    }
  }
  CHECK(share_sum / static_cast<double>(shard_count) > 0.5);
}

TEST_CASE("dirichlet partition is deterministic in the seed") {
  Dataset ds = generate_blobs(300, 4, 4, 0.5, 31);
  auto a = dirichlet_partition(ds, 8, 0.3, 5);
  auto b = dirichlet_partition(ds, 8, 0.3, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].data == b[k].data);
  }
}

TEST_CASE("dirichlet partition validates its inputs") {
  Dataset ds = generate_blobs(20, 4, 4, 0.5, 37);
  CHECK_THROWS_AS(dirichlet_partition(ds, 0, 0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(dirichlet_partition(ds, 21, 0.5, 1), std::invalid_argument);
  CHECK_THROWS_AS(dirichlet_partition(ds, 4, 0.0, 1), std::invalid_argument);
  Dataset partial = ds;
  partial.labels[0] = kUnlabeled;
  CHECK_THROWS_AS(dirichlet_partition(partial, 4, 0.5, 1), std::invalid_argument);
}

TEST_CASE("shard classification distinguishes the three label states") {
  Dataset ds = generate_blobs(10, 4, 4, 0.5, 41);
  CHECK(ClientShard::classify(ds) == Designation::kFullyLabeled);
  Dataset none = ds;
  for (int& y : none.labels) y = kUnlabeled;
  CHECK(ClientShard::classify(none) == Designation::kFullyUnlabeled);
  Dataset some = ds;
  some.labels[0] = kUnlabeled;
  CHECK(ClientShard::classify(some) == Designation::kPartiallyLabeled);
}

TEST_CASE("split scenario hides all labels on exactly alpha*K clients") {
  Dataset ds = generate_blobs(1000, 4, 4, 0.5, 43);
  std::vector<ClientShard> shards = dirichlet_partition(ds, 10, 1.0, 7);
  std::vector<Matrix> features_before;
  for (const ClientShard& s : shards) features_before.push_back(s.data.features);

  Scenario scenario{Scenario::Mode::kSplit, 0.6, 0.05};
  std::vector<ClientShard> out = build_scenario(shards, scenario, 11);
  REQUIRE(out.size() == 10);
  std::size_t unlabeled = 0;
  std::size_t labeled = 0;
  for (std::size_t k = 0; k < out.size(); ++k) {
    // Feature values are never touched by label deficiency.
    CHECK(out[k].data.features == features_before[k]);
    if (out[k].designation == Designation::kFullyUnlabeled) {
      ++unlabeled;
      for (int y : out[k].data.labels) CHECK(y == kUnlabeled);
    } else {
      REQUIRE(out[k].designation == Designation::kFullyLabeled);
      ++labeled;
      CHECK(out[k].data.fully_labeled());
    }
  }
  CHECK(unlabeled == 6);
  CHECK(labeled == 4);
}

TEST_CASE("split scenario with alpha zero changes nothing") {
  Dataset ds = generate_blobs(200, 4, 4, 0.5, 47);
  std::vector<ClientShard> shards = dirichlet_partition(ds, 5, 1.0, 3);
  std::vector<ClientShard> out =
      build_scenario(shards, Scenario{Scenario::Mode::kSplit, 0.0, 0.05}, 1);
  for (std::size_t k = 0; k < out.size(); ++k) {
    CHECK(out[k].data == shards[k].data);
    CHECK(out[k].designation == Designation::kFullyLabeled);
  }
}

TEST_CASE("split scenario rejects non-integral and degenerate alpha") {
  Dataset ds = generate_blobs(200, 4, 4, 0.5, 53);
  std::vector<ClientShard> shards = dirichlet_partition(ds, 10, 1.0, 3);
  CHECK_THROWS_AS(build_scenario(shards, Scenario{Scenario::Mode::kSplit, 0.55, 0.05}, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_scenario(shards, Scenario{Scenario::Mode::kSplit, 1.0, 0.05}, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(build_scenario(shards, Scenario{Scenario::Mode::kSplit, -0.1, 0.05}, 1),
                  std::invalid_argument);
}

TEST_CASE("partial scenario keeps ceil(ratio * n) labels on every client") {
  Dataset ds = generate_blobs(1000, 4, 4, 0.5, 59);
  std::vector<ClientShard> shards = dirichlet_partition(ds, 5, 1e6, 3);
  Scenario scenario{Scenario::Mode::kPartial, 0.6, 0.05};
  std::vector<ClientShard> out = build_scenario(shards, scenario, 13);
  for (std::size_t k = 0; k < out.size(); ++k) {
    std::size_t n = out[k].data.size();
    std::size_t expect = static_cast<std::size_t>(
        std::ceil(0.05 * static_cast<double>(n)));
    CHECK(out[k].data.labeled_count() == expect);
    CHECK(out[k].data.features == shards[k].data.features);
    if (expect < n) {
      CHECK(out[k].designation == Designation::kPartiallyLabeled);
    }
  }
  // 5% of 200 samples is exactly 10.
  Dataset two_hundred = generate_blobs(200, 4, 4, 0.5, 61);
  std::vector<ClientShard> single = dirichlet_partition(two_hundred, 1, 1.0, 1);
  std::vector<ClientShard> partial = build_scenario(single, scenario, 17);
  CHECK(partial[0].data.labeled_count() == 10);
}

TEST_CASE("partial scenario with ratio one keeps every label") {
  Dataset ds = generate_blobs(100, 4, 4, 0.5, 67);
  std::vector<ClientShard> shards = dirichlet_partition(ds, 4, 1.0, 3);
  std::vector<ClientShard> out =
      build_scenario(shards, Scenario{Scenario::Mode::kPartial, 0.6, 1.0}, 1);
  for (const ClientShard& s : out) {
    CHECK(s.data.fully_labeled());
    CHECK(s.designation == Designation::kFullyLabeled);
  }
  CHECK_THROWS_AS(build_scenario(shards, Scenario{Scenario::Mode::kPartial, 0.6, 0.0}, 1),
                  std::invalid_argument);
}

TEST_CASE("scenario application is deterministic in the seed") {
  Dataset ds = generate_blobs(500, 4, 4, 0.5, 71);
  std::vector<ClientShard> shards = dirichlet_partition(ds, 10, 1.0, 3);
  Scenario scenario{Scenario::Mode::kSplit, 0.6, 0.05};
  std::vector<ClientShard> a = build_scenario(shards, scenario, 5);
  std::vector<ClientShard> b = build_scenario(shards, scenario, 5);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK(a[k].data == b[k].data);
    CHECK(a[k].designation == b[k].designation);
  }
  // Some alternate seed must pick a different unlabeled set.
  bool any_different = false;
  for (std::uint64_t seed = 6; seed <= 10 && !any_different; ++seed) {
    std::vector<ClientShard> c = build_scenario(shards, scenario, seed);
    for (std::size_t k = 0; k < a.size(); ++k) {
      if (c[k].designation != a[k].designation) any_different = true;
    }
  }
  CHECK(any_different);
}
