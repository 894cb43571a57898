#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "twinsight/data.hpp"
#include "twinsight/mlp.hpp"

namespace twinsight {

// Batch-averaged components of the twin objectives, reported per round.
struct LossBreakdown {
  double supervised = 0.0;        // cross-entropy plus pseudo-label term
  double unsupervised = 0.0;      // instance-discrimination term
  double alignment = 0.0;         // neighborhood-alignment term
  double pseudo_mask_rate = 0.0;  // accepted fraction of unlabeled rows
};

struct RoundReport {
  std::size_t round = 0;
  std::string method;
  double test_accuracy = 0.0;
  LossBreakdown losses;
  std::vector<std::size_t> sampled_clients;
  std::optional<double> probe_cosine;  // empty when a probe gradient vanished
};

// Fraction of test rows whose argmax logit matches the label. Ties break
// toward the lowest class index.
double evaluate(const ModelParams& w_s, const Dataset& test);

// Cosine of two gradient vectors; empty when either norm is below 1e-12.
std::optional<double> probe_cosine_from_grads(std::span<const double> g_labeled,
                                              std::span<const double> g_unlabeled);

// Conflict between the two halves of semi-supervised training, measured on
// one parameter vector: g_L is the cross-entropy gradient on the labeled
// batch, g_U the pseudo-label-loss gradient on the unlabeled batch (clean
// input, confidences held constant). Returns their cosine, or empty when a
// gradient is numerically zero (e.g. every pseudo-label masked out).
std::optional<double> gradient_conflict_probe(const ModelParams& w, const Matrix& labeled_x,
                                              std::span<const int> labeled_y,
                                              const Matrix& unlabeled_x,
                                              double confidence_threshold);

// Smallest 1-based index whose accuracy reaches the target; empty when the
// history never gets there.
std::optional<std::size_t> rounds_to_target(std::span<const double> history, double target);

}  // namespace twinsight
