#include "twinsight/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "twinsight/errors.hpp"

namespace twinsight {

namespace {

void axpy(std::vector<double>& dst, double a, std::span<const double> x) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * x[i];
}

// Gram matrix of already-normalized rows: exactly symmetric, diagonal pinned
// to 1, off-diagonal cosines clamped against rounding drift.
Matrix gram_clamped(const Matrix& zhat) {
  Matrix m = matmul_nt(zhat, zhat);
  for (std::size_t i = 0; i < m.rows; ++i) {
    for (std::size_t j = 0; j < m.cols; ++j) {
      m.at(i, j) = (i == j) ? 1.0 : std::clamp(m.at(i, j), -1.0, 1.0);
    }
  }
  return m;
}

// Pulls a gradient w.r.t. the row-normalized matrix back to the raw one:
// per row, project out the component along the unit vector, then divide by
// the original norm.
Matrix normalize_backward(const Matrix& zhat, const std::vector<double>& norms,
                          const Matrix& grad_hat) {
  Matrix out(grad_hat.rows, grad_hat.cols);
  for (std::size_t i = 0; i < grad_hat.rows; ++i) {
    auto g = grad_hat.row(i);
    auto z = zhat.row(i);
    const double along = dot(g, z);
    auto dst = out.row(i);
    for (std::size_t c = 0; c < grad_hat.cols; ++c) dst[c] = (g[c] - along * z[c]) / norms[i];
  }
  return out;
}

void check_batch_geometry(const TwinBatch& batch, const TwinHyper& hyper, bool labeled) {
  if (batch.clean.empty()) throw std::invalid_argument("twin objective: empty batch");
  const std::size_t n = batch.clean.rows;
  if (labeled) {
    if (batch.labels.size() != n)
      throw std::invalid_argument("twin objective: labels do not match batch rows");
  } else {
    if (!batch.labels.empty())
      throw std::invalid_argument("twin objective: unlabeled batch carries labels");
    if (!batch.train_view.same_shape(batch.clean))
      throw std::invalid_argument("twin objective: train view shape mismatch");
  }
  if (hyper.lambda_u != 0.0) {
    if (batch.contrast_views.rows != 2 * n || batch.contrast_views.cols != batch.clean.cols)
      throw std::invalid_argument("twin objective: contrastive views must be 2n x d");
  }
}

}  // namespace

void TwinHyper::validate() const {
  if (!(lambda_u >= 0.0) || !std::isfinite(lambda_u))
    throw ConfigError("lambda_u must be finite and >= 0");
  if (!(lambda_d >= 0.0) || !std::isfinite(lambda_d))
    throw ConfigError("lambda_d must be finite and >= 0");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ConfigError("temperature must be finite and > 0");
  if (!(confidence_threshold > 0.0) || !(confidence_threshold < 1.0))
    throw ConfigError("confidence_threshold must lie in (0, 1)");
}

ScalarLoss cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows == 0) throw std::invalid_argument("cross_entropy: empty logits");
  if (labels.size() != logits.rows)
    throw std::invalid_argument("cross_entropy: one label per row required");
  const std::size_t n = logits.rows;
  const std::size_t classes = logits.cols;

  Matrix probs = softmax_rows(logits);
  ScalarLoss out;
  out.grad = Matrix(n, classes);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) +
                                  " outside [0, " + std::to_string(classes) + ")");
    out.loss -= std::log(probs.at(i, static_cast<std::size_t>(y)));
    for (std::size_t c = 0; c < classes; ++c) {
      out.grad.at(i, c) = probs.at(i, c) / static_cast<double>(n);
    }
    out.grad.at(i, static_cast<std::size_t>(y)) -= 1.0 / static_cast<double>(n);
  }
  out.loss /= static_cast<double>(n);
  if (!std::isfinite(out.loss)) throw NumericError("cross_entropy: non-finite loss");
  return out;
}

PseudoLabelResult pseudo_label_loss(const Matrix& clean_probs, const Matrix& train_logits,
                                    double threshold) {
  if (clean_probs.rows == 0) throw std::invalid_argument("pseudo_label_loss: empty batch");
  if (!clean_probs.same_shape(train_logits))
    throw std::invalid_argument("pseudo_label_loss: probability/logit shape mismatch");

  const std::size_t n = clean_probs.rows;
  const std::size_t classes = clean_probs.cols;
  Matrix train_probs = softmax_rows(train_logits);

  PseudoLabelResult out;
  out.grad_train_logits = Matrix(n, classes);
  out.mask.assign(n, false);
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // argmax with lowest-index tie-break
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c) {
      if (clean_probs.at(i, c) > clean_probs.at(i, best)) best = c;
    }
    const double confidence = clean_probs.at(i, best);
    if (!(confidence > threshold)) continue;

    out.mask[i] = true;
    ++accepted;
    out.loss += confidence * -std::log(train_probs.at(i, best));
    const double scale = confidence / static_cast<double>(n);
    for (std::size_t c = 0; c < classes; ++c) {
      out.grad_train_logits.at(i, c) = scale * train_probs.at(i, c);
    }
    out.grad_train_logits.at(i, best) -= scale;
  }
  out.loss /= static_cast<double>(n);
  out.mask_rate = static_cast<double>(accepted) / static_cast<double>(n);
  if (!std::isfinite(out.loss)) throw NumericError("pseudo_label_loss: non-finite loss");
  return out;
}

ScalarLoss nt_xent(const Matrix& embeddings, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("nt_xent: temperature must be > 0");
  const std::size_t n = embeddings.rows;
  if (n < 2 || n % 2 != 0)
    throw std::invalid_argument("nt_xent: needs an even number (>= 2) of interleaved views");

  const std::vector<double> norms = row_norms(embeddings);
  const Matrix zhat = l2_normalize_rows(embeddings);
  const Matrix sim = matmul_nt(zhat, zhat);

  double loss = 0.0;
  Matrix g(n, n);  // d(mean anchor loss)/d(sim/temperature scaled entries)
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t partner = i ^ 1u;

    double max_logit = -1.0 / 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      max_logit = std::max(max_logit, sim.at(i, k) / temperature);
    }
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      denom += std::exp(sim.at(i, k) / temperature - max_logit);
    }
    const double lse = max_logit + std::log(denom);
    loss += lse - sim.at(i, partner) / temperature;

    const double scale = 1.0 / (static_cast<double>(n) * temperature);
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      const double w = std::exp(sim.at(i, k) / temperature - lse);
      g.at(i, k) = scale * (w - (k == partner ? 1.0 : 0.0));
    }
  }
  loss /= static_cast<double>(n);

  // sim is zhat zhat^T, so d/d(zhat) = (g + g^T) zhat, then back through the
  // row normalization.
  const Matrix grad_hat = matmul(add(g, transpose(g)), zhat);
  ScalarLoss out;
  out.loss = loss;
  out.grad = normalize_backward(zhat, norms, grad_hat);
  if (!std::isfinite(out.loss)) throw NumericError("nt_xent: non-finite loss");
  ensure_finite(out.grad, "nt_xent gradient");
  return out;
}

Matrix neighborhood_matrix(const Matrix& z) {
  if (z.empty()) throw std::invalid_argument("neighborhood_matrix: empty input");
  return gram_clamped(l2_normalize_rows(z));
}

AlignmentResult alignment_loss(const Matrix& z_s, const Matrix& z_u, bool mean_reduction) {
  if (z_s.empty() || z_u.empty()) throw std::invalid_argument("alignment_loss: empty input");
  if (z_s.rows != z_u.rows)
    throw std::invalid_argument("alignment_loss: row counts must match");

  const std::size_t n = z_s.rows;
  const std::vector<double> norms_s = row_norms(z_s);
  const std::vector<double> norms_u = row_norms(z_u);
  const Matrix zhat_s = l2_normalize_rows(z_s);
  const Matrix zhat_u = l2_normalize_rows(z_u);
  const Matrix diff = sub(gram_clamped(zhat_s), gram_clamped(zhat_u));

  const double scale = mean_reduction ? 1.0 / static_cast<double>(n * n) : 1.0;
  AlignmentResult out;
  for (double v : diff.data) out.loss += v * v;
  out.loss *= scale;

  // L = scale * |M_s - M_u|_F^2 with M = zhat zhat^T; since diff is symmetric
  // the gradient w.r.t. each normalized matrix collapses to 4*scale*diff*zhat.
  out.grad_z_s = normalize_backward(zhat_s, norms_s, scaled(matmul(diff, zhat_s), 4.0 * scale));
  out.grad_z_u = normalize_backward(zhat_u, norms_u, scaled(matmul(diff, zhat_u), -4.0 * scale));
  if (!std::isfinite(out.loss)) throw NumericError("alignment_loss: non-finite loss");
  ensure_finite(out.grad_z_s, "alignment gradient (supervised side)");
  ensure_finite(out.grad_z_u, "alignment gradient (unsupervised side)");
  return out;
}

TwinBatch prepare_labeled_batch(const Matrix& features, std::span<const int> labels,
                                const TwinHyper& hyper, const AugmentPolicy& policy, Rng& rng) {
  if (features.rows == 0) throw std::invalid_argument("prepare_labeled_batch: empty batch");
  if (labels.size() != features.rows)
    throw std::invalid_argument("prepare_labeled_batch: one label per row required");

  TwinBatch batch;
  batch.clean = features;
  batch.labels.assign(labels.begin(), labels.end());
  if (hyper.lambda_u != 0.0) {
    batch.contrast_views = Matrix(2 * features.rows, features.cols);
    for (std::size_t i = 0; i < features.rows; ++i) {
      for (std::size_t v = 0; v < 2; ++v) {
        const std::vector<double> view = augment(features.row(i), policy, rng);
        std::copy(view.begin(), view.end(), batch.contrast_views.row(2 * i + v).begin());
      }
    }
  }
  return batch;
}

TwinBatch prepare_unlabeled_batch(const Matrix& features, const TwinHyper& hyper,
                                  const AugmentPolicy& policy, Rng& rng) {
  if (features.rows == 0) throw std::invalid_argument("prepare_unlabeled_batch: empty batch");

  TwinBatch batch;
  batch.clean = features;
  if (hyper.lambda_u != 0.0) {
    batch.contrast_views = Matrix(2 * features.rows, features.cols);
    for (std::size_t i = 0; i < features.rows; ++i) {
      for (std::size_t v = 0; v < 2; ++v) {
        const std::vector<double> view = augment(features.row(i), policy, rng);
        std::copy(view.begin(), view.end(), batch.contrast_views.row(2 * i + v).begin());
      }
    }
  }
  if (hyper.pseudo_train_on_clean) {
    batch.train_view = features;
  } else {
    batch.train_view = Matrix(features.rows, features.cols);
    for (std::size_t i = 0; i < features.rows; ++i) {
      const std::vector<double> view = augment(features.row(i), policy, rng);
      std::copy(view.begin(), view.end(), batch.train_view.row(i).begin());
    }
  }
  return batch;
}

ObjectiveResult labeled_objective(const TwinBatch& batch, const ModelParams& w_s,
                                  const ModelParams& w_u, const TwinHyper& hyper,
                                  TermGrads* capture) {
  check_batch_geometry(batch, hyper, /*labeled=*/true);
  const std::size_t ps = w_s.spec.param_count();
  const std::size_t pu = w_u.spec.param_count();

  ObjectiveResult out;
  out.grad_s.assign(ps, 0.0);
  out.grad_u.assign(pu, 0.0);
  if (capture) {
    capture->supervised_s.assign(ps, 0.0);
    capture->supervised_u.assign(pu, 0.0);
    capture->contrastive_s.assign(ps, 0.0);
    capture->contrastive_u.assign(pu, 0.0);
    capture->alignment_s.assign(ps, 0.0);
    capture->alignment_u.assign(pu, 0.0);
  }

  const ForwardTrace trace_s = forward(w_s, batch.clean);
  const ScalarLoss ce = cross_entropy(trace_s.output(), batch.labels);
  const std::vector<double> g_sup = backward(w_s, trace_s, ce.grad);
  axpy(out.grad_s, 1.0, g_sup);
  out.sup_loss = ce.loss;
  if (capture) capture->supervised_s = g_sup;

  if (hyper.lambda_u != 0.0) {
    const ForwardTrace trace_views = forward(w_u, batch.contrast_views);
    const ScalarLoss ntx = nt_xent(trace_views.output(), hyper.temperature);
    const std::vector<double> g_con = backward(w_u, trace_views, ntx.grad);
    axpy(out.grad_u, hyper.lambda_u, g_con);
    out.unsup_loss = ntx.loss;
    if (capture) capture->contrastive_u = g_con;
  }

  if (hyper.lambda_d != 0.0) {
    const ForwardTrace trace_u = forward(w_u, batch.clean);
    const AlignmentResult al = alignment_loss(trace_s.encoder_output(), trace_u.encoder_output(),
                                              hyper.alignment_mean);
    const std::vector<double> g_al_s = backward_from_encoder(w_s, trace_s, al.grad_z_s);
    const std::vector<double> g_al_u = backward_from_encoder(w_u, trace_u, al.grad_z_u);
    axpy(out.grad_s, hyper.lambda_d, g_al_s);
    axpy(out.grad_u, hyper.lambda_d, g_al_u);
    out.align_loss = al.loss;
    if (capture) {
      capture->alignment_s = g_al_s;
      capture->alignment_u = g_al_u;
    }
  }

  out.total = out.sup_loss + hyper.lambda_u * out.unsup_loss + hyper.lambda_d * out.align_loss;
  ensure_finite(out.grad_s, "labeled objective gradient (supervised)");
  ensure_finite(out.grad_u, "labeled objective gradient (unsupervised)");
  return out;
}

ObjectiveResult unlabeled_objective_frozen(const TwinBatch& batch, const Matrix& clean_probs,
                                           const ModelParams& w_s, const ModelParams& w_u,
                                           const TwinHyper& hyper, TermGrads* capture) {
  check_batch_geometry(batch, hyper, /*labeled=*/false);
  if (clean_probs.rows != batch.clean.rows ||
      clean_probs.cols != w_s.spec.output_dim())
    throw std::invalid_argument("unlabeled objective: clean probability shape mismatch");
  const std::size_t ps = w_s.spec.param_count();
  const std::size_t pu = w_u.spec.param_count();

  ObjectiveResult out;
  out.grad_s.assign(ps, 0.0);
  out.grad_u.assign(pu, 0.0);
  if (capture) {
    capture->supervised_s.assign(ps, 0.0);
    capture->supervised_u.assign(pu, 0.0);
    capture->contrastive_s.assign(ps, 0.0);
    capture->contrastive_u.assign(pu, 0.0);
    capture->alignment_s.assign(ps, 0.0);
    capture->alignment_u.assign(pu, 0.0);
  }

  const ForwardTrace trace_train = forward(w_s, batch.train_view);
  const PseudoLabelResult pl =
      pseudo_label_loss(clean_probs, trace_train.output(), hyper.confidence_threshold);
  const std::vector<double> g_pl = backward(w_s, trace_train, pl.grad_train_logits);
  axpy(out.grad_s, 1.0, g_pl);
  out.sup_loss = pl.loss;
  out.mask_rate = pl.mask_rate;
  if (capture) capture->supervised_s = g_pl;

  if (hyper.lambda_u != 0.0) {
    const ForwardTrace trace_views = forward(w_u, batch.contrast_views);
    const ScalarLoss ntx = nt_xent(trace_views.output(), hyper.temperature);
    const std::vector<double> g_con = backward(w_u, trace_views, ntx.grad);
    axpy(out.grad_u, hyper.lambda_u, g_con);
    out.unsup_loss = ntx.loss;
    if (capture) capture->contrastive_u = g_con;
  }

  if (hyper.lambda_d != 0.0) {
    const ForwardTrace trace_s_clean = forward(w_s, batch.clean);
    const ForwardTrace trace_u_clean = forward(w_u, batch.clean);
    const AlignmentResult al =
        alignment_loss(trace_s_clean.encoder_output(), trace_u_clean.encoder_output(),
                       hyper.alignment_mean);
    const std::vector<double> g_al_s = backward_from_encoder(w_s, trace_s_clean, al.grad_z_s);
    const std::vector<double> g_al_u = backward_from_encoder(w_u, trace_u_clean, al.grad_z_u);
    axpy(out.grad_s, hyper.lambda_d, g_al_s);
    axpy(out.grad_u, hyper.lambda_d, g_al_u);
    out.align_loss = al.loss;
    if (capture) {
      capture->alignment_s = g_al_s;
      capture->alignment_u = g_al_u;
    }
  }

  out.total = out.sup_loss + hyper.lambda_u * out.unsup_loss + hyper.lambda_d * out.align_loss;
  ensure_finite(out.grad_s, "unlabeled objective gradient (supervised)");
  ensure_finite(out.grad_u, "unlabeled objective gradient (unsupervised)");
  return out;
}

ObjectiveResult unlabeled_objective(const TwinBatch& batch, const ModelParams& w_s,
                                    const ModelParams& w_u, const TwinHyper& hyper,
                                    TermGrads* capture) {
  // The pseudo-labels come from the current supervised model on the clean
  // input, held constant w.r.t. the parameters.
  const ForwardTrace trace_clean = forward(w_s, batch.clean);
  const Matrix clean_probs = softmax_rows(trace_clean.output());
  return unlabeled_objective_frozen(batch, clean_probs, w_s, w_u, hyper, capture);
}

ObjectiveResult labeled_objective(const Matrix& features, std::span<const int> labels,
                                  const ModelParams& w_s, const ModelParams& w_u,
                                  const TwinHyper& hyper, const AugmentPolicy& policy, Rng& rng) {
  const TwinBatch batch = prepare_labeled_batch(features, labels, hyper, policy, rng);
  return labeled_objective(batch, w_s, w_u, hyper);
}

ObjectiveResult unlabeled_objective(const Matrix& features, const ModelParams& w_s,
                                    const ModelParams& w_u, const TwinHyper& hyper,
                                    const AugmentPolicy& policy, Rng& rng) {
  const TwinBatch batch = prepare_unlabeled_batch(features, hyper, policy, rng);
  return unlabeled_objective(batch, w_s, w_u, hyper);
}

}  // namespace twinsight
