#pragma once

#include <span>
#include <vector>

#include "twinsight/data.hpp"
#include "twinsight/matrix.hpp"
#include "twinsight/mlp.hpp"
#include "twinsight/rng.hpp"

namespace twinsight {

// Weights and thresholds of the twin objectives.
struct TwinHyper {
  double lambda_u = 1.0;               // weight of the instance-discrimination term
  double lambda_d = 1.0;               // weight of the neighborhood-alignment term
  double temperature = 0.5;            // NT-Xent temperature
  double confidence_threshold = 0.95;  // pseudo-label acceptance threshold r, in (0,1)
  // Mean over the n^2 Gram entries (batch-size independent) vs raw squared
  // Frobenius sum.
  bool alignment_mean = true;
  // Literal reading of the surrogate loss: train the pseudo-label term on the
  // clean input instead of an augmented view.
  bool pseudo_train_on_clean = false;

  void validate() const;
  bool operator==(const TwinHyper&) const = default;
};

struct ScalarLoss {
  double loss = 0.0;
  Matrix grad;  // w.r.t. the (raw) input matrix
};

struct PseudoLabelResult {
  double loss = 0.0;
  Matrix grad_train_logits;
  std::vector<bool> mask;  // true where the clean confidence exceeds the threshold
  double mask_rate = 0.0;  // accepted fraction
};

struct AlignmentResult {
  double loss = 0.0;
  Matrix grad_z_s;
  Matrix grad_z_u;
};

// Mean over rows of -log softmax(logits)[row, label].
ScalarLoss cross_entropy(const Matrix& logits, std::span<const int> labels);

// Confidence-gated surrogate: rows whose clean max-probability strictly
// exceeds `threshold` contribute max_prob * (-log softmax(train_logits)[row,
// argmax]); the mean is over ALL rows. The clean probabilities act as
// constants; gradient flows only into train_logits on accepted rows.
PseudoLabelResult pseudo_label_loss(const Matrix& clean_probs, const Matrix& train_logits,
                                    double threshold);

// Instance discrimination over 2N interleaved rows (rows 2k, 2k+1 are the two
// views of sample k). Rows are l2-normalized internally; the gradient is
// w.r.t. the raw embeddings.
ScalarLoss nt_xent(const Matrix& embeddings, double temperature);

// Gram matrix of the row-normalized input: symmetric, unit diagonal, entries
// in [-1, 1].
Matrix neighborhood_matrix(const Matrix& z);

// Squared difference of the two Gram matrices, averaged over the n^2 entries
// when mean_reduction (otherwise the raw sum). Gradients propagate through
// the row normalization into both raw inputs.
AlignmentResult alignment_loss(const Matrix& z_s, const Matrix& z_u, bool mean_reduction = true);

// A mini-batch prepared for the twin objectives: the clean features plus the
// stochastic views the contrastive and pseudo-label terms consume. Augmented
// views are drawn once so the loss evaluation itself is deterministic.
struct TwinBatch {
  Matrix clean;             // n x d
  std::vector<int> labels;  // empty for unlabeled batches
  Matrix contrast_views;    // 2n x d interleaved views; empty when lambda_u == 0
  Matrix train_view;        // n x d view for the pseudo-label term; unlabeled only
};

TwinBatch prepare_labeled_batch(const Matrix& features, std::span<const int> labels,
                                const TwinHyper& hyper, const AugmentPolicy& policy, Rng& rng);
TwinBatch prepare_unlabeled_batch(const Matrix& features, const TwinHyper& hyper,
                                  const AugmentPolicy& policy, Rng& rng);

// Per-term parameter gradients, captured on request by the objectives. The
// supervised term touches only w_s and the instance-discrimination term only
// w_u; the corresponding cross entries stay identically zero.
struct TermGrads {
  std::vector<double> supervised_s, supervised_u;
  std::vector<double> contrastive_s, contrastive_u;
  std::vector<double> alignment_s, alignment_u;
};

struct ObjectiveResult {
  double total = 0.0;
  std::vector<double> grad_s;  // w.r.t. supervised params
  std::vector<double> grad_u;  // w.r.t. unsupervised params
  // Unweighted component values.
  double sup_loss = 0.0;    // cross-entropy or pseudo-label term
  double unsup_loss = 0.0;  // NT-Xent term
  double align_loss = 0.0;  // neighborhood alignment term
  double mask_rate = 0.0;   // pseudo-label acceptance rate (unlabeled batches)
};

// Total = CE(head_s(enc_s(x)), y) + lambda_u * NT-Xent(f_u(views)) +
// lambda_d * alignment(enc_s(x), enc_u(x)). Alignment gradients flow into
// both parameter sets.
ObjectiveResult labeled_objective(const TwinBatch& batch, const ModelParams& w_s,
                                  const ModelParams& w_u, const TwinHyper& hyper,
                                  TermGrads* capture = nullptr);

// Total = pseudo_label_loss(softmax(f_s(x)), f_s(view), r) + lambda_u *
// NT-Xent(f_u(views)) + lambda_d * alignment(enc_s(x), enc_u(x)). The clean
// forward producing the pseudo-labels carries no gradient.
ObjectiveResult unlabeled_objective(const TwinBatch& batch, const ModelParams& w_s,
                                    const ModelParams& w_u, const TwinHyper& hyper,
                                    TermGrads* capture = nullptr);

// Same as unlabeled_objective but with the pseudo-label probabilities pinned
// by the caller. Used by the finite-difference checks and the conflict probe,
// where the stop-gradient quantities must stay fixed while parameters move.
ObjectiveResult unlabeled_objective_frozen(const TwinBatch& batch, const Matrix& clean_probs,
                                           const ModelParams& w_s, const ModelParams& w_u,
                                           const TwinHyper& hyper, TermGrads* capture = nullptr);

// Convenience wrappers: prepare + evaluate.
ObjectiveResult labeled_objective(const Matrix& features, std::span<const int> labels,
                                  const ModelParams& w_s, const ModelParams& w_u,
                                  const TwinHyper& hyper, const AugmentPolicy& policy, Rng& rng);
ObjectiveResult unlabeled_objective(const Matrix& features, const ModelParams& w_s,
                                    const ModelParams& w_u, const TwinHyper& hyper,
                                    const AugmentPolicy& policy, Rng& rng);

}  // namespace twinsight
