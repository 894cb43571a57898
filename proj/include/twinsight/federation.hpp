#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <utility>
#include <vector>

#include "twinsight/data.hpp"
#include "twinsight/diagnostics.hpp"
#include "twinsight/losses.hpp"
#include "twinsight/mlp.hpp"
#include "twinsight/rng.hpp"

namespace twinsight {

// twin_sight trains both models jointly; fedavg_lower is the labeled-only
// single-model baseline; fedavg_pseudo adds confidence-gated pseudo-labels to
// the single model.
enum class Method { kTwinSight, kFedAvgLower, kFedAvgPseudo };

std::string_view method_name(Method m);
Method method_from_name(std::string_view name);  // ConfigError on unknown names

// The server-side pair of models shipped to clients each round.
struct GlobalState {
  ModelParams supervised;
  ModelParams unsupervised;
  std::size_t round = 0;

  // All parameters finite; encoder widths of the two models identical (the
  // alignment term compares their encoder outputs row-wise).
  void validate() const;
};

struct MethodConfig {
  Method method = Method::kTwinSight;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 64;
  TwinHyper hyper;
  SgdConfig sgd;
  AugmentPolicy augment;

  void validate() const;  // ConfigError on violations
};

// One client's contribution to a round.
struct ClientUpdate {
  std::size_t client_id = 0;
  ModelParams supervised;
  std::optional<ModelParams> unsupervised;  // absent for single-model methods
  std::size_t sample_count = 0;             // aggregation weight basis n_k

  // Batch-averaged local loss components.
  double sup_loss = 0.0;
  double unsup_loss = 0.0;
  double align_loss = 0.0;
  // Pseudo-label bookkeeping: rows offered to the confidence gate and rows
  // that passed it.
  std::size_t unlabeled_rows = 0;
  std::size_t accepted_rows = 0;
};

// floor(rate * total) distinct ids drawn uniformly without replacement,
// returned sorted. Errors when the draw would be empty.
std::vector<std::size_t> sample_clients(std::size_t total, double rate, Rng& rng);

// Shuffled index mini-batches over [0, count). A final partial batch is
// merged into its predecessor, never dropped.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   Rng& rng);

// One client's local pass: E epochs of mini-batches, one SGD step per model
// per batch. Twin training applies the labeled objective to labeled rows and
// the unlabeled objective to unlabeled rows, summing gradients before
// stepping; a model whose batch gradient is identically zero is not stepped
// (so an untouched stream comes back bit-for-bit unchanged).
ClientUpdate local_train_twin(const ClientShard& shard, const GlobalState& globals,
                              const MethodConfig& cfg, Rng& rng);

// Labeled-only baseline: cross-entropy on the labeled rows, supervised model
// only. Requires at least one labeled sample.
ClientUpdate local_train_lower(const ClientShard& shard, const GlobalState& globals,
                               const MethodConfig& cfg, Rng& rng);

// Single-model semi-supervised baseline: cross-entropy on labeled rows plus
// the confidence-gated pseudo-label term on unlabeled rows. This is the
// design whose labeled/unlabeled gradient conflict the probe measures.
ClientUpdate local_train_pseudo(const ClientShard& shard, const GlobalState& globals,
                                const MethodConfig& cfg, Rng& rng);

enum class Stream { kSupervised, kUnsupervised };

// n_k / sum_j n_j over the given updates, in list order. Strictly positive,
// sums to 1.
std::vector<double> fedavg_weights(const std::vector<ClientUpdate>& updates);

// Weighted average of one parameter stream. Contributions are summed in
// ascending client-id order regardless of list order, making the result
// exactly permutation-invariant; identical inputs aggregate to themselves
// bit-for-bit.
ModelParams fedavg_aggregate(const std::vector<ClientUpdate>& updates, Stream stream);

struct RoundOptions {
  MethodConfig method;
  double sample_rate = 0.5;    // fraction of eligible clients per round
  std::uint64_t base_seed = 0;  // all per-round streams derive from this
  std::size_t workers = 1;     // parallel local-training fan-out
};

// One communication round: sample clients (fedavg_lower samples only clients
// holding labels), probe the labeled/unlabeled gradient conflict at the
// incoming weights, train locally (parallel when workers > 1, reduced in
// sorted client order), aggregate each stream, evaluate on the test set.
std::pair<GlobalState, RoundReport> run_round(const GlobalState& globals,
                                              const std::vector<ClientShard>& shards,
                                              const Dataset& test, const RoundOptions& opts);

}  // namespace twinsight
