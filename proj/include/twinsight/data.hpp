#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "twinsight/matrix.hpp"
#include "twinsight/rng.hpp"

namespace twinsight {

// Label slot value for samples without annotation.
inline constexpr int kUnlabeled = -1;

struct Dataset {
  Matrix features;          // n x d
  std::vector<int> labels;  // class index in [0, class_count) or kUnlabeled
  std::size_t class_count = 0;

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
  std::size_t labeled_count() const;
  bool fully_labeled() const { return labeled_count() == size(); }
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

enum class Designation { kFullyLabeled, kFullyUnlabeled, kPartiallyLabeled };
std::string designation_name(Designation d);

struct ClientShard {
  std::size_t client_id = 0;
  Dataset data;
  Designation designation = Designation::kFullyLabeled;

  // Recomputes the designation from the label slots and checks consistency.
  static Designation classify(const Dataset& d);
};

// Stochastic vector augmentation: scale jitter, then additive Gaussian noise,
// then independent feature dropout.
struct AugmentPolicy {
  double noise_sigma = 0.1;               // >= 0
  double dropout = 0.1;                   // [0, 1)
  double jitter_lo = 0.8, jitter_hi = 1.2;  // 0 < lo <= 1 <= hi

  void validate() const;
  bool operator==(const AugmentPolicy&) const = default;
};

std::vector<double> augment(std::span<const double> x, const AugmentPolicy& policy, Rng& rng);

// Gaussian class blobs: class means drawn once on the unit sphere, samples
// are mean + N(0, spread^2 I). Labels balanced within +-1; rows shuffled.
Dataset generate_blobs(std::size_t n, std::size_t classes, std::size_t dim, double spread,
                       std::uint64_t seed);

// Stratified split: per class, `test_count` rows overall are moved to the
// test set with largest-remainder allocation across classes.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t test_count,
                                             std::uint64_t seed);

// CSV schema: header "label,f0,...,f{d-1}"; label is an integer >= 0 or -1
// for unlabeled; UTF-8, LF line endings. `declared_classes` == 0 infers the
// class count as max(label)+1.
Dataset load_csv(const std::string& path, std::size_t declared_classes = 0);
void save_csv(const Dataset& ds, const std::string& path);

// Per-class Dirichlet(gamma * 1_K) allocation with largest-remainder
// rounding. Shards are disjoint, cover the dataset, and empty shards are
// repaired by moving one sample from the largest shard.
std::vector<ClientShard> dirichlet_partition(const Dataset& dataset, std::size_t num_clients,
                                             double gamma, std::uint64_t seed);

struct Scenario {
  enum class Mode { kSplit, kPartial };
  Mode mode = Mode::kSplit;
  double alpha = 0.6;           // split: fraction of fully-unlabeled clients (T/K)
  double labeled_ratio = 0.05;  // partial: per-client fraction keeping labels

  bool operator==(const Scenario&) const = default;
};

// Applies label deficiency to fully-labeled shards. Split mode hides all
// labels on a seeded choice of alpha*K clients; partial mode keeps labels on
// a seeded choice of ceil(labeled_ratio * n_k) samples per client. Feature
// values are never touched.
std::vector<ClientShard> build_scenario(std::vector<ClientShard> shards, const Scenario& scenario,
                                        std::uint64_t seed);

}  // namespace twinsight
