#include "twinsight/diagnostics.hpp"

#include <stdexcept>

#include "twinsight/losses.hpp"
#include "twinsight/matrix.hpp"

namespace twinsight {

double evaluate(const ModelParams& w_s, const Dataset& test) {
  if (test.size() == 0) throw std::invalid_argument("evaluate: empty test set");
  if (!test.fully_labeled()) throw std::invalid_argument("evaluate: test set must be labeled");
  if (w_s.spec.output_dim() != test.class_count)
    throw std::invalid_argument("evaluate: model head width does not match class count");

  const Matrix logits = forward(w_s, test.features).output();
  std::size_t correct = 0;
  for (std::size_t i = 0; i < logits.rows; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols; ++c) {
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    }
    if (static_cast<int>(best) == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows);
}

std::optional<double> probe_cosine_from_grads(std::span<const double> g_labeled,
                                              std::span<const double> g_unlabeled) {
  constexpr double kVanished = 1e-12;
  if (norm2(g_labeled) < kVanished || norm2(g_unlabeled) < kVanished) return std::nullopt;
  return cosine_similarity(g_labeled, g_unlabeled);
}

std::optional<double> gradient_conflict_probe(const ModelParams& w, const Matrix& labeled_x,
                                              std::span<const int> labeled_y,
                                              const Matrix& unlabeled_x,
                                              double confidence_threshold) {
  if (labeled_x.rows == 0 || unlabeled_x.rows == 0)
    throw std::invalid_argument("gradient_conflict_probe: empty probe batch");

  const ForwardTrace trace_l = forward(w, labeled_x);
  const ScalarLoss ce = cross_entropy(trace_l.output(), labeled_y);
  const std::vector<double> g_labeled = backward(w, trace_l, ce.grad);

  const ForwardTrace trace_u = forward(w, unlabeled_x);
  const Matrix clean_probs = softmax_rows(trace_u.output());
  const PseudoLabelResult pl =
      pseudo_label_loss(clean_probs, trace_u.output(), confidence_threshold);
  const std::vector<double> g_unlabeled = backward(w, trace_u, pl.grad_train_logits);

  return probe_cosine_from_grads(g_labeled, g_unlabeled);
}

std::optional<std::size_t> rounds_to_target(std::span<const double> history, double target) {
  if (history.empty()) throw std::invalid_argument("rounds_to_target: empty history");
  if (!(target > 0.0) || !(target <= 1.0))
    throw std::invalid_argument("rounds_to_target: target must lie in (0, 1]");
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (history[i] >= target) return i + 1;
  }
  return std::nullopt;
}

}  // namespace twinsight
