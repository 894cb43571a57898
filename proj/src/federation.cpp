#include "twinsight/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <string>
#include <thread>

#include "twinsight/errors.hpp"
#include "twinsight/matrix.hpp"

namespace twinsight {

namespace {

bool all_zero(std::span<const double> v) {
  for (double x : v)
    if (x != 0.0) return false;
  return true;
}

void axpy(std::vector<double>& dst, std::span<const double> x) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += x[i];
}

// Extracts the rows named by `idx` (and their labels when `with_labels`).
std::pair<Matrix, std::vector<int>> gather_rows(const Dataset& d,
                                                const std::vector<std::size_t>& idx,
                                                bool with_labels) {
  Matrix x(idx.size(), d.dim());
  std::vector<int> y;
  if (with_labels) y.reserve(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    auto src = d.features.row(idx[i]);
    std::copy(src.begin(), src.end(), x.row(i).begin());
    if (with_labels) y.push_back(d.labels[idx[i]]);
  }
  return {std::move(x), std::move(y)};
}

std::size_t accepted_from_rate(double rate, std::size_t rows) {
  return static_cast<std::size_t>(std::llround(rate * static_cast<double>(rows)));
}

// Accumulates per-batch loss components and turns them into batch means.
struct LossTally {
  double sup = 0.0, unsup = 0.0, align = 0.0;
  std::size_t steps = 0;

  void add(double s, double u, double a) {
    sup += s;
    unsup += u;
    align += a;
    ++steps;
  }
  void finish(ClientUpdate& up) const {
    const double n = steps > 0 ? static_cast<double>(steps) : 1.0;
    up.sup_loss = sup / n;
    up.unsup_loss = unsup / n;
    up.align_loss = align / n;
  }
};

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kTwinSight: return "twin_sight";
    case Method::kFedAvgLower: return "fedavg_lower";
    case Method::kFedAvgPseudo: return "fedavg_pseudo";
  }
  throw std::invalid_argument("method_name: unknown method value");
}

Method method_from_name(std::string_view name) {
  if (name == "twin_sight") return Method::kTwinSight;
  if (name == "fedavg_lower") return Method::kFedAvgLower;
  if (name == "fedavg_pseudo") return Method::kFedAvgPseudo;
  throw ConfigError("unknown method '" + std::string(name) +
                    "' (expected twin_sight, fedavg_lower or fedavg_pseudo)");
}

void GlobalState::validate() const {
  supervised.spec.validate();
  unsupervised.spec.validate();
  if (supervised.values.size() != supervised.spec.param_count() ||
      unsupervised.values.size() != unsupervised.spec.param_count())
    throw std::invalid_argument("global state: parameter vector length disagrees with spec");
  ensure_finite(supervised.values, "global supervised parameters");
  ensure_finite(unsupervised.values, "global unsupervised parameters");

  const auto& ws = supervised.spec.widths;
  const auto& wu = unsupervised.spec.widths;
  const std::vector<std::size_t> enc_s(ws.begin(), ws.end() - 1);
  const std::vector<std::size_t> enc_u(wu.begin(), wu.end() - 1);
  if (enc_s != enc_u)
    throw std::invalid_argument(
        "global state: the two models must share encoder widths (alignment compares their "
        "encoder outputs)");
}

void MethodConfig::validate() const {
  if (local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2 (contrastive pairs)");
  hyper.validate();
  try {
    sgd.validate();
    augment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::size_t> sample_clients(std::size_t total, double rate, Rng& rng) {
  if (!(rate > 0.0) || rate > 1.0)
    throw std::invalid_argument("sample_clients: rate must lie in (0, 1]");
  if (total == 0) throw std::invalid_argument("sample_clients: no clients");
  // Nudge against representation error so e.g. 0.1 * 30 still floors to 3.
  const auto want = static_cast<std::size_t>(
      std::floor(rate * static_cast<double>(total) + 1e-9));
  if (want == 0)
    throw std::invalid_argument("sample_clients: rate selects zero clients");

  std::vector<std::size_t> ids(total);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < want; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, total - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(want);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size,
                                                   Rng& rng) {
  if (count == 0) throw std::invalid_argument("make_batches: empty index range");
  if (batch_size == 0) throw std::invalid_argument("make_batches: zero batch size");

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  if (batches.size() > 1 && batches.back().size() < batch_size) {
    auto tail = std::move(batches.back());
    batches.pop_back();
    auto& prev = batches.back();
    prev.insert(prev.end(), tail.begin(), tail.end());
  }
  return batches;
}

ClientUpdate local_train_twin(const ClientShard& shard, const GlobalState& globals,
                              const MethodConfig& cfg, Rng& rng) {
  if (shard.data.size() == 0) throw std::invalid_argument("local_train_twin: empty shard");

  ModelParams w_s = globals.supervised;
  ModelParams w_u = globals.unsupervised;
  SgdState state_s(cfg.sgd, w_s.spec.param_count());
  SgdState state_u(cfg.sgd, w_u.spec.param_count());

  ClientUpdate up;
  up.client_id = shard.client_id;
  up.sample_count = shard.data.size();
  LossTally tally;

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (const auto& batch : make_batches(shard.data.size(), cfg.batch_size, rng)) {
      if (batch.size() < 2)
        throw std::invalid_argument(
            "local_train_twin: mini-batch smaller than 2 even after merging the tail");

      std::vector<std::size_t> lab, unl;
      for (std::size_t i : batch) {
        (shard.data.labels[i] == kUnlabeled ? unl : lab).push_back(i);
      }

      std::vector<double> grad_s(w_s.spec.param_count(), 0.0);
      std::vector<double> grad_u(w_u.spec.param_count(), 0.0);
      double sup = 0.0, unsup = 0.0, align = 0.0;

      if (!lab.empty()) {
        auto [x, y] = gather_rows(shard.data, lab, true);
        const TwinBatch b = prepare_labeled_batch(x, y, cfg.hyper, cfg.augment, rng);
        const ObjectiveResult res = labeled_objective(b, w_s, w_u, cfg.hyper);
        axpy(grad_s, res.grad_s);
        axpy(grad_u, res.grad_u);
        sup += res.sup_loss;
        unsup += res.unsup_loss;
        align += res.align_loss;
      }
      if (!unl.empty()) {
        auto [x, y] = gather_rows(shard.data, unl, false);
        (void)y;
        const TwinBatch b = prepare_unlabeled_batch(x, cfg.hyper, cfg.augment, rng);
        const ObjectiveResult res = unlabeled_objective(b, w_s, w_u, cfg.hyper);
        axpy(grad_s, res.grad_s);
        axpy(grad_u, res.grad_u);
        sup += res.sup_loss;
        unsup += res.unsup_loss;
        align += res.align_loss;
        up.unlabeled_rows += unl.size();
        up.accepted_rows += accepted_from_rate(res.mask_rate, unl.size());
      }

      if (!all_zero(grad_s)) sgd_step(w_s, grad_s, state_s);
      if (!all_zero(grad_u)) sgd_step(w_u, grad_u, state_u);
      tally.add(sup, unsup, align);
    }
  }

  tally.finish(up);
  up.supervised = std::move(w_s);
  up.unsupervised = std::move(w_u);
  return up;
}

ClientUpdate local_train_lower(const ClientShard& shard, const GlobalState& globals,
                               const MethodConfig& cfg, Rng& rng) {
  std::vector<std::size_t> lab;
  for (std::size_t i = 0; i < shard.data.size(); ++i) {
    if (shard.data.labels[i] != kUnlabeled) lab.push_back(i);
  }
  if (lab.empty())
    throw std::invalid_argument("local_train_lower: shard has no labeled samples");

  ModelParams w_s = globals.supervised;
  SgdState state_s(cfg.sgd, w_s.spec.param_count());

  ClientUpdate up;
  up.client_id = shard.client_id;
  up.sample_count = lab.size();
  LossTally tally;

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (const auto& batch : make_batches(lab.size(), cfg.batch_size, rng)) {
      std::vector<std::size_t> rows;
      rows.reserve(batch.size());
      for (std::size_t j : batch) rows.push_back(lab[j]);

      auto [x, y] = gather_rows(shard.data, rows, true);
      const ForwardTrace trace = forward(w_s, x);
      const ScalarLoss ce = cross_entropy(trace.output(), y);
      const std::vector<double> grad = backward(w_s, trace, ce.grad);
      if (!all_zero(grad)) sgd_step(w_s, grad, state_s);
      tally.add(ce.loss, 0.0, 0.0);
    }
  }

  tally.finish(up);
  up.supervised = std::move(w_s);
  return up;
}

ClientUpdate local_train_pseudo(const ClientShard& shard, const GlobalState& globals,
                                const MethodConfig& cfg, Rng& rng) {
  if (shard.data.size() == 0) throw std::invalid_argument("local_train_pseudo: empty shard");

  ModelParams w_s = globals.supervised;
  SgdState state_s(cfg.sgd, w_s.spec.param_count());

  // The baseline draws only the pseudo-label train view; no contrastive pair
  // and no alignment exist in the single-model design.
  TwinHyper view_hyper = cfg.hyper;
  view_hyper.lambda_u = 0.0;
  view_hyper.lambda_d = 0.0;

  ClientUpdate up;
  up.client_id = shard.client_id;
  up.sample_count = shard.data.size();
  LossTally tally;

  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    for (const auto& batch : make_batches(shard.data.size(), cfg.batch_size, rng)) {
      std::vector<std::size_t> lab, unl;
      for (std::size_t i : batch) {
        (shard.data.labels[i] == kUnlabeled ? unl : lab).push_back(i);
      }

      std::vector<double> grad(w_s.spec.param_count(), 0.0);
      double sup = 0.0;

      if (!lab.empty()) {
        auto [x, y] = gather_rows(shard.data, lab, true);
        const ForwardTrace trace = forward(w_s, x);
        const ScalarLoss ce = cross_entropy(trace.output(), y);
        axpy(grad, backward(w_s, trace, ce.grad));
        sup += ce.loss;
      }
      if (!unl.empty()) {
        auto [x, y] = gather_rows(shard.data, unl, false);
        (void)y;
        const TwinBatch b = prepare_unlabeled_batch(x, view_hyper, cfg.augment, rng);
        const Matrix clean_probs = softmax_rows(forward(w_s, b.clean).output());
        const ForwardTrace trace = forward(w_s, b.train_view);
        const PseudoLabelResult pl =
            pseudo_label_loss(clean_probs, trace.output(), cfg.hyper.confidence_threshold);
        axpy(grad, backward(w_s, trace, pl.grad_train_logits));
        sup += pl.loss;
        up.unlabeled_rows += unl.size();
        up.accepted_rows += accepted_from_rate(pl.mask_rate, unl.size());
      }

      if (!all_zero(grad)) sgd_step(w_s, grad, state_s);
      tally.add(sup, 0.0, 0.0);
    }
  }

  tally.finish(up);
  up.supervised = std::move(w_s);
  return up;
}

std::vector<double> fedavg_weights(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg_weights: empty update list");
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.sample_count < 1)
      throw std::invalid_argument("fedavg_weights: client update with zero samples");
    total += static_cast<double>(u.sample_count);
  }
  std::vector<double> beta;
  beta.reserve(updates.size());
  for (const auto& u : updates) beta.push_back(static_cast<double>(u.sample_count) / total);
  return beta;
}

ModelParams fedavg_aggregate(const std::vector<ClientUpdate>& updates, Stream stream) {
  if (updates.empty()) throw std::invalid_argument("fedavg_aggregate: empty update list");

  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });

  auto params_of = [&](const ClientUpdate& u) -> const ModelParams& {
    if (stream == Stream::kSupervised) return u.supervised;
    if (!u.unsupervised)
      throw std::invalid_argument(
          "fedavg_aggregate: update lacks an unsupervised stream");
    return *u.unsupervised;
  };

  // Anchored deviation form: anchor + sum_k beta_k * (p_k - anchor). With
  // sum(beta) = 1 this equals the weighted mean, but identical inputs come
  // back bit-for-bit (a zero-learning-rate round must not drift the globals).
  const ModelParams& first = params_of(updates[order[0]]);
  ModelParams out = first;

  const std::vector<double> beta = fedavg_weights(updates);
  double beta_total = 0.0;
  for (std::size_t k : order) {
    const ModelParams& p = params_of(updates[k]);
    if (p.spec != first.spec || p.values.size() != out.values.size())
      throw std::invalid_argument("fedavg_aggregate: parameter vector mismatch across clients");
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] += beta[k] * (p.values[i] - first.values[i]);
    }
    beta_total += beta[k];
  }
  if (std::abs(beta_total - 1.0) > 1e-12)
    throw NumericError("fedavg_aggregate: aggregation weights do not sum to 1");
  ensure_finite(out.values, "aggregated parameters");
  return out;
}

namespace {

// Draws up to `limit` of the given rows for the probe batches.
std::vector<std::size_t> probe_rows(const std::vector<std::size_t>& candidates, std::size_t limit,
                                    Rng& rng) {
  std::vector<std::size_t> rows = candidates;
  std::shuffle(rows.begin(), rows.end(), rng);
  rows.resize(std::min(limit, rows.size()));
  return rows;
}

// Once per round, at the incoming global weights: one labeled batch from the
// first sampled client holding labels, one unlabeled batch from the first
// sampled client holding unlabeled rows. Empty when the sampled set offers no
// such pair.
std::optional<double> conflict_probe_for_round(const GlobalState& globals,
                                               const std::vector<ClientShard>& shards,
                                               const std::vector<std::size_t>& sampled,
                                               const RoundOptions& opts) {
  std::vector<std::size_t> lab_rows, unl_rows;
  const ClientShard* lab_shard = nullptr;
  const ClientShard* unl_shard = nullptr;
  for (std::size_t pos : sampled) {
    const ClientShard& sh = shards[pos];
    if (!lab_shard && sh.data.labeled_count() > 0) lab_shard = &sh;
    if (!unl_shard && sh.data.labeled_count() < sh.data.size()) unl_shard = &sh;
  }
  if (!lab_shard || !unl_shard) return std::nullopt;

  for (std::size_t i = 0; i < lab_shard->data.size(); ++i) {
    if (lab_shard->data.labels[i] != kUnlabeled) lab_rows.push_back(i);
  }
  for (std::size_t i = 0; i < unl_shard->data.size(); ++i) {
    if (unl_shard->data.labels[i] == kUnlabeled) unl_rows.push_back(i);
  }

  Rng rng = make_rng(derive_seed(opts.base_seed, globals.round, stream_tag::kProbe));
  const std::vector<std::size_t> li = probe_rows(lab_rows, opts.method.batch_size, rng);
  const std::vector<std::size_t> ui = probe_rows(unl_rows, opts.method.batch_size, rng);

  auto [lx, ly] = gather_rows(lab_shard->data, li, true);
  auto [ux, uy] = gather_rows(unl_shard->data, ui, false);
  (void)uy;
  return gradient_conflict_probe(globals.supervised, lx, ly, ux,
                                 opts.method.hyper.confidence_threshold);
}

}  // namespace

std::pair<GlobalState, RoundReport> run_round(const GlobalState& globals,
                                              const std::vector<ClientShard>& shards,
                                              const Dataset& test, const RoundOptions& opts) {
  opts.method.validate();
  globals.validate();
  if (shards.empty()) throw std::invalid_argument("run_round: no client shards");
  if (!(opts.sample_rate > 0.0) || opts.sample_rate > 1.0)
    throw std::invalid_argument("run_round: sample rate must lie in (0, 1]");

  // The lower bound never schedules clients without labels; twin training
  // never schedules single-sample clients (no mini-batch of >= 2 possible).
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < shards.size(); ++i) {
    if (opts.method.method == Method::kFedAvgLower && shards[i].data.labeled_count() == 0)
      continue;
    if (opts.method.method == Method::kTwinSight && shards[i].data.size() < 2) continue;
    pool.push_back(i);
  }
  if (pool.empty()) throw std::invalid_argument("run_round: no eligible clients for this method");

  Rng sampler = make_rng(derive_seed(opts.base_seed, globals.round, stream_tag::kSampling));
  std::vector<std::size_t> sampled;
  for (std::size_t pick : sample_clients(pool.size(), opts.sample_rate, sampler)) {
    sampled.push_back(pool[pick]);
  }

  const std::optional<double> probe = conflict_probe_for_round(globals, shards, sampled, opts);

  std::vector<ClientUpdate> updates(sampled.size());
  auto train_one = [&](std::size_t slot) {
    const ClientShard& shard = shards[sampled[slot]];
    Rng rng = make_rng(derive_seed(opts.base_seed, globals.round, shard.client_id));
    switch (opts.method.method) {
      case Method::kTwinSight:
        updates[slot] = local_train_twin(shard, globals, opts.method, rng);
        break;
      case Method::kFedAvgLower:
        updates[slot] = local_train_lower(shard, globals, opts.method, rng);
        break;
      case Method::kFedAvgPseudo:
        updates[slot] = local_train_pseudo(shard, globals, opts.method, rng);
        break;
    }
  };

  const std::size_t workers = std::max<std::size_t>(1, std::min(opts.workers, sampled.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < sampled.size(); ++i) train_one(i);
  } else {
    // Each slot is a pure function of (globals, shard, derived seed), so the
    // schedule cannot affect results; the reduce below walks slots in order.
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < sampled.size(); i = next.fetch_add(1)) {
          try {
            train_one(i);
          } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
      });
    }
    for (auto& t : threads) t.join();
    if (failure) std::rethrow_exception(failure);
  }

  GlobalState next_state;
  next_state.supervised = fedavg_aggregate(updates, Stream::kSupervised);
  next_state.unsupervised = opts.method.method == Method::kTwinSight
                                ? fedavg_aggregate(updates, Stream::kUnsupervised)
                                : globals.unsupervised;
  next_state.round = globals.round + 1;

  RoundReport report;
  report.round = next_state.round;
  report.method = std::string(method_name(opts.method.method));
  report.test_accuracy = evaluate(next_state.supervised, test);
  report.probe_cosine = probe;
  for (std::size_t pos : sampled) report.sampled_clients.push_back(shards[pos].client_id);

  const std::vector<double> beta = fedavg_weights(updates);
  std::size_t unl_total = 0, acc_total = 0;
  for (std::size_t k = 0; k < updates.size(); ++k) {
    report.losses.supervised += beta[k] * updates[k].sup_loss;
    report.losses.unsupervised += beta[k] * updates[k].unsup_loss;
    report.losses.alignment += beta[k] * updates[k].align_loss;
    unl_total += updates[k].unlabeled_rows;
    acc_total += updates[k].accepted_rows;
  }
  report.losses.pseudo_mask_rate =
      unl_total == 0 ? 0.0
                     : static_cast<double>(acc_total) / static_cast<double>(unl_total);
  return {std::move(next_state), std::move(report)};
}

}  // namespace twinsight
