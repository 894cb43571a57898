#include "twinsight/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "twinsight/data.hpp"
#include "twinsight/federation.hpp"
#include "twinsight/gradcheck.hpp"
#include "twinsight/losses.hpp"
#include "twinsight/rng.hpp"

namespace twinsight {

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (double& v : m.data) v = n(rng);
  return m;
}

ModelParams random_model(const MlpSpec& spec, Rng& rng) {
  ModelParams p = ModelParams::zeros(spec);
  std::normal_distribution<double> n(0.0, 0.5);
  for (double& v : p.values) v = n(rng);
  return p;
}

// Literal per-anchor evaluation of the contrastive loss, no shared terms and
// no log-sum-exp shift.
double nt_xent_naive(const Matrix& embeddings, double temperature) {
  const Matrix zhat = l2_normalize_rows(embeddings);
  const std::size_t n = zhat.rows;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t partner = i ^ 1u;
    double denom = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      if (k == i) continue;
      denom += std::exp(dot(zhat.row(i), zhat.row(k)) / temperature);
    }
    const double pos = std::exp(dot(zhat.row(i), zhat.row(partner)) / temperature);
    total += -std::log(pos / denom);
  }
  return total / static_cast<double>(n);
}

bool fd_cross_entropy(Rng& rng) {
  for (int inst = 0; inst < 8; ++inst) {
    const std::size_t n = 2 + inst % 5, c = 2 + inst % 4;
    Matrix logits = random_matrix(n, c, rng);
    std::vector<int> labels(n);
    std::uniform_int_distribution<int> pick(0, static_cast<int>(c) - 1);
    for (auto& y : labels) y = pick(rng);
    const ScalarLoss base = cross_entropy(logits, labels);
    auto f = [&](std::span<const double> x) {
      Matrix m(n, c);
      m.data.assign(x.begin(), x.end());
      return cross_entropy(m, labels).loss;
    };
    if (!check_gradient(f, logits.data, base.grad.data).passed()) return false;
  }
  return true;
}

bool fd_pseudo_label(Rng& rng) {
  for (int inst = 0; inst < 8; ++inst) {
    const std::size_t n = 2 + inst % 5, c = 3;
    const Matrix clean_probs = softmax_rows(random_matrix(n, c, rng, 2.0));
    Matrix train = random_matrix(n, c, rng);
    const PseudoLabelResult base = pseudo_label_loss(clean_probs, train, 0.5);
    auto f = [&](std::span<const double> x) {
      Matrix m(n, c);
      m.data.assign(x.begin(), x.end());
      return pseudo_label_loss(clean_probs, m, 0.5).loss;
    };
    if (!check_gradient(f, train.data, base.grad_train_logits.data).passed()) return false;
  }
  return true;
}

bool fd_nt_xent(Rng& rng) {
  for (int inst = 0; inst < 8; ++inst) {
    const std::size_t pairs = 1 + inst % 4, d = 3 + inst % 4;
    Matrix z = random_matrix(2 * pairs, d, rng);
    const ScalarLoss base = nt_xent(z, 0.5);
    auto f = [&](std::span<const double> x) {
      Matrix m(2 * pairs, d);
      m.data.assign(x.begin(), x.end());
      return nt_xent(m, 0.5).loss;
    };
    if (!check_gradient(f, z.data, base.grad.data).passed()) return false;
  }
  return true;
}

bool fd_alignment(Rng& rng) {
  for (int inst = 0; inst < 8; ++inst) {
    const std::size_t n = 2 + inst % 5, ds = 3, du = 4;
    Matrix zs = random_matrix(n, ds, rng);
    Matrix zu = random_matrix(n, du, rng);
    const AlignmentResult base = alignment_loss(zs, zu, true);
    auto fs = [&](std::span<const double> x) {
      Matrix m(n, ds);
      m.data.assign(x.begin(), x.end());
      return alignment_loss(m, zu, true).loss;
    };
    auto fu = [&](std::span<const double> x) {
      Matrix m(n, du);
      m.data.assign(x.begin(), x.end());
      return alignment_loss(zs, m, true).loss;
    };
    if (!check_gradient(fs, zs.data, base.grad_z_s.data).passed()) return false;
    if (!check_gradient(fu, zu.data, base.grad_z_u.data).passed()) return false;
  }
  return true;
}

bool fd_objectives(Rng& rng) {
  // Smooth activations keep central differences clean (no kink crossings).
  MlpSpec sup{{4, 5, 3}, Activation::kTanh, HeadKind::kClassifier};
  MlpSpec uns{{4, 5, 4}, Activation::kTanh, HeadKind::kEmbedding};
  TwinHyper hyper;
  hyper.confidence_threshold = 0.5;
  AugmentPolicy policy;

  for (int inst = 0; inst < 4; ++inst) {
    const std::size_t n = 2 + inst;
    const ModelParams w_s = random_model(sup, rng);
    const ModelParams w_u = random_model(uns, rng);
    const Matrix x = random_matrix(n, 4, rng);
    std::vector<int> y(n);
    std::uniform_int_distribution<int> pick(0, 2);
    for (auto& v : y) v = pick(rng);

    const TwinBatch lb = prepare_labeled_batch(x, y, hyper, policy, rng);
    const ObjectiveResult lres = labeled_objective(lb, w_s, w_u, hyper);
    auto lfs = [&](std::span<const double> p) {
      ModelParams w = w_s;
      w.values.assign(p.begin(), p.end());
      return labeled_objective(lb, w, w_u, hyper).total;
    };
    auto lfu = [&](std::span<const double> p) {
      ModelParams w = w_u;
      w.values.assign(p.begin(), p.end());
      return labeled_objective(lb, w_s, w, hyper).total;
    };
    if (!check_gradient(lfs, w_s.values, lres.grad_s).passed()) return false;
    if (!check_gradient(lfu, w_u.values, lres.grad_u).passed()) return false;

    // The pseudo-label probabilities are constants of the optimization, so
    // the difference quotient must hold them fixed too.
    const TwinBatch ub = prepare_unlabeled_batch(x, hyper, policy, rng);
    const Matrix probs = softmax_rows(forward(w_s, ub.clean).output());
    const ObjectiveResult ures = unlabeled_objective_frozen(ub, probs, w_s, w_u, hyper);
    auto ufs = [&](std::span<const double> p) {
      ModelParams w = w_s;
      w.values.assign(p.begin(), p.end());
      return unlabeled_objective_frozen(ub, probs, w, w_u, hyper).total;
    };
    auto ufu = [&](std::span<const double> p) {
      ModelParams w = w_u;
      w.values.assign(p.begin(), p.end());
      return unlabeled_objective_frozen(ub, probs, w_s, w, hyper).total;
    };
    if (!check_gradient(ufs, w_s.values, ures.grad_s).passed()) return false;
    if (!check_gradient(ufu, w_u.values, ures.grad_u).passed()) return false;
  }
  return true;
}

bool nt_xent_oracle(Rng& rng) {
  for (std::size_t pairs = 1; pairs <= 8; ++pairs) {
    Matrix z = random_matrix(2 * pairs, 5, rng);
    const double fast = nt_xent(z, 0.5).loss;
    const double naive = nt_xent_naive(z, 0.5);
    if (std::abs(fast - naive) > 1e-10) return false;
  }
  // One positive pair: the positive is the only candidate, loss is exactly 0.
  Matrix two = random_matrix(2, 4, rng);
  if (nt_xent(two, 0.7).loss != 0.0) return false;
  // Identical embeddings: every similarity is 1, loss collapses to ln(2N-1).
  for (std::size_t pairs = 2; pairs <= 4; ++pairs) {
    Matrix same(2 * pairs, 3);
    for (std::size_t i = 0; i < same.rows; ++i) {
      same.at(i, 0) = 0.3;
      same.at(i, 1) = -1.1;
      same.at(i, 2) = 0.55;
    }
    const double expected = std::log(static_cast<double>(2 * pairs - 1));
    if (std::abs(nt_xent(same, 0.5).loss - expected) > 1e-10) return false;
  }
  return true;
}

bool fedavg_oracle(Rng& rng) {
  MlpSpec spec{{3, 4, 2}, Activation::kRelu, HeadKind::kClassifier};
  std::uniform_int_distribution<std::size_t> counts(1, 500);
  for (int inst = 0; inst < 10; ++inst) {
    std::vector<ClientUpdate> updates;
    for (std::size_t k = 0; k < 5; ++k) {
      ClientUpdate u;
      u.client_id = k;
      u.supervised = random_model(spec, rng);
      u.sample_count = counts(rng);
      updates.push_back(std::move(u));
    }
    const ModelParams got = fedavg_aggregate(updates, Stream::kSupervised);

    long double total = 0.0L;
    for (const auto& u : updates) total += static_cast<long double>(u.sample_count);
    for (std::size_t i = 0; i < got.values.size(); ++i) {
      long double acc = 0.0L;
      for (const auto& u : updates) {
        acc += static_cast<long double>(u.sample_count) / total *
               static_cast<long double>(u.supervised.values[i]);
      }
      if (std::abs(got.values[i] - static_cast<double>(acc)) > 1e-12) return false;
    }

    std::vector<ClientUpdate> shuffled = updates;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const ModelParams again = fedavg_aggregate(shuffled, Stream::kSupervised);
    if (!(again == got)) return false;
  }
  return true;
}

bool partition_cover(Rng& rng) {
  std::uniform_real_distribution<double> g(0.05, 5.0);
  for (int inst = 0; inst < 5; ++inst) {
    const Dataset ds = generate_blobs(400 + 37 * inst, 4, 6, 0.5, 900 + inst);
    const std::size_t k = 3 + static_cast<std::size_t>(inst);
    const auto shards = dirichlet_partition(ds, k, g(rng), 1234 + inst);
    std::size_t total = 0;
    for (const auto& s : shards) {
      if (s.data.size() == 0) return false;
      total += s.data.size();
    }
    if (total != ds.size()) return false;
  }
  return true;
}

bool rounds_oracle(Rng& rng) {
  std::uniform_real_distribution<double> acc(0.0, 1.0);
  for (int inst = 0; inst < 50; ++inst) {
    std::vector<double> history(1 + inst % 20);
    for (double& h : history) h = acc(rng);
    const double target = std::max(1e-6, acc(rng));
    std::optional<std::size_t> brute;
    for (std::size_t i = 0; i < history.size(); ++i) {
      if (history[i] >= target) {
        brute = i + 1;
        break;
      }
    }
    if (rounds_to_target(history, target) != brute) return false;
  }
  return true;
}

}  // namespace

bool run_selftest(std::ostream& out) {
  Rng rng = make_rng(20240517);
  struct Suite {
    const char* name;
    std::function<bool(Rng&)> fn;
  };
  const Suite suites[] = {
      {"finite differences: cross_entropy", fd_cross_entropy},
      {"finite differences: pseudo_label_loss", fd_pseudo_label},
      {"finite differences: nt_xent", fd_nt_xent},
      {"finite differences: alignment_loss", fd_alignment},
      {"finite differences: twin objectives", fd_objectives},
      {"oracle: nt_xent naive double loop", nt_xent_oracle},
      {"oracle: fedavg high-precision mean", fedavg_oracle},
      {"oracle: dirichlet partition cover", partition_cover},
      {"oracle: rounds_to_target brute scan", rounds_oracle},
  };

  bool all = true;
  for (const auto& s : suites) {
    bool ok = false;
    std::string note;
    try {
      ok = s.fn(rng);
    } catch (const std::exception& e) {
      ok = false;
      note = std::string(" (") + e.what() + ")";
    }
    out << (ok ? "ok   - " : "FAIL - ") << s.name << note << "\n";
    all = all && ok;
  }
  return all;
}

}  // namespace twinsight
