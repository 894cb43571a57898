#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "twinsight/data.hpp"
#include "twinsight/diagnostics.hpp"
#include "twinsight/matrix.hpp"
#include "twinsight/mlp.hpp"
#include "twinsight/rng.hpp"

using namespace twinsight;

namespace {

// A single linear layer that copies its input to the logits: predictions are
// fully controlled by the feature values.
ModelParams identity_classifier(std::size_t classes) {
  MlpSpec spec{{classes, classes}, Activation::kRelu, HeadKind::kClassifier};
  ModelParams p = ModelParams::zeros(spec);
  for (std::size_t i = 0; i < classes; ++i) p.weights(0)[i * classes + i] = 1.0;
  return p;
}

// A single linear layer whose logits are a constant bias vector, independent
// of the input.
ModelParams constant_logit_model(std::size_t dim, std::vector<double> bias) {
  MlpSpec spec{{dim, bias.size()}, Activation::kRelu, HeadKind::kClassifier};
  ModelParams p = ModelParams::zeros(spec);
  for (std::size_t i = 0; i < bias.size(); ++i) p.bias(0)[i] = bias[i];
  return p;
}

}  // namespace

TEST_CASE("evaluate scores a hand-built half-right test set at exactly 0.5") {
  ModelParams model = identity_classifier(2);
  Dataset test{Matrix::from_rows({{5.0, 0.0}, {0.0, 5.0}}), {0, 0}, 2};
  CHECK(evaluate(model, test) == 0.5);
}

TEST_CASE("evaluate breaks argmax ties toward the lowest class index") {
  ModelParams model = identity_classifier(3);
  Dataset tie{Matrix::from_rows({{3.0, 3.0, 3.0}}), {0}, 3};
  CHECK(evaluate(model, tie) == 1.0);
  Dataset tie_other{Matrix::from_rows({{3.0, 3.0, 3.0}}), {1}, 3};
  CHECK(evaluate(model, tie_other) == 0.0);
}

TEST_CASE("an untrained model scores near chance on balanced blobs") {
  Dataset test = generate_blobs(1000, 4, 16, 0.6, 5);
  MlpSpec spec{{16, 64, 4}, Activation::kRelu, HeadKind::kClassifier};
  Rng rng = make_rng(6);
  ModelParams model = ModelParams::random_init(spec, rng);
  double acc = evaluate(model, test);
  CHECK(acc > 0.25 - 0.1);
  CHECK(acc < 0.25 + 0.1);
}

TEST_CASE("evaluate validates the test set") {
  ModelParams model = identity_classifier(2);
  Dataset empty;
  CHECK_THROWS_AS(evaluate(model, empty), std::invalid_argument);

  Dataset partial{Matrix::from_rows({{1.0, 0.0}}), {kUnlabeled}, 2};
  CHECK_THROWS_AS(evaluate(model, partial), std::invalid_argument);

  Dataset wrong_width{Matrix::from_rows({{1.0, 0.0}}), {0}, 3};
  CHECK_THROWS_AS(evaluate(model, wrong_width), std::invalid_argument);
}

TEST_CASE("probe cosine endpoints and the undefined marker") {
  std::vector<double> g{0.5, -1.0, 2.0};
  std::vector<double> scaled{1.0, -2.0, 4.0};
  std::vector<double> negated{-0.5, 1.0, -2.0};
  CHECK(probe_cosine_from_grads(g, g) == std::optional<double>{1.0});
  CHECK(*probe_cosine_from_grads(g, scaled) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(*probe_cosine_from_grads(g, negated) == doctest::Approx(-1.0).epsilon(1e-12));

  std::vector<double> ortho_a{1.0, 0.0};
  std::vector<double> ortho_b{0.0, -2.0};
  CHECK(*probe_cosine_from_grads(ortho_a, ortho_b) == doctest::Approx(0.0));

  std::vector<double> zero{0.0, 0.0, 0.0};
  CHECK_FALSE(probe_cosine_from_grads(g, zero).has_value());
  CHECK_FALSE(probe_cosine_from_grads(zero, g).has_value());
  std::vector<double> tiny(3, 1e-14);  // below the 1e-12 norm floor
  CHECK_FALSE(probe_cosine_from_grads(tiny, g).has_value());
}

TEST_CASE("conflict probe is +1 when the pseudo-labels agree with the truth") {
  // Constant confident logits: the pseudo gradient is the true-label gradient
  // scaled by the confidence, so the parameter-space cosine is exactly 1.
  ModelParams model = constant_logit_model(3, {10.0, 0.0, 0.0});
  Matrix labeled_x = Matrix::from_rows({{0.7, -0.3, 1.1}});
  std::vector<int> labeled_y{0};
  Matrix unlabeled_x = labeled_x;
  std::optional<double> cos = gradient_conflict_probe(model, labeled_x, labeled_y, unlabeled_x,
                                                      0.9);
  REQUIRE(cos.has_value());
  CHECK(*cos == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conflict probe turns negative when pseudo-labels oppose the truth") {
  // The model confidently predicts class 0 but the labeled batch says class
  // 1: the two linear-layer gradients point across each other.
  ModelParams model = constant_logit_model(3, {10.0, 0.0, 0.0});
  Matrix labeled_x = Matrix::from_rows({{0.7, -0.3, 1.1}});
  std::vector<int> labeled_y{1};
  std::optional<double> cos = gradient_conflict_probe(model, labeled_x, labeled_y, labeled_x,
                                                      0.9);
  REQUIRE(cos.has_value());
  CHECK(*cos < 0.0);
}

TEST_CASE("conflict probe is undefined when every pseudo-label is masked") {
  ModelParams model = constant_logit_model(3, {0.0, 0.0, 0.0});  // uniform probs
  Matrix labeled_x = Matrix::from_rows({{0.7, -0.3, 1.1}});
  std::vector<int> labeled_y{1};
  std::optional<double> cos = gradient_conflict_probe(model, labeled_x, labeled_y, labeled_x,
                                                      0.95);
  CHECK_FALSE(cos.has_value());
}

TEST_CASE("conflict probe rejects empty probe batches") {
  ModelParams model = constant_logit_model(3, {0.0, 0.0, 0.0});
  Matrix empty;
  Matrix x = Matrix::from_rows({{0.7, -0.3, 1.1}});
  std::vector<int> y{0};
  CHECK_THROWS_AS(gradient_conflict_probe(model, empty, {}, x, 0.95), std::invalid_argument);
  CHECK_THROWS_AS(gradient_conflict_probe(model, x, y, empty, 0.95), std::invalid_argument);
}

TEST_CASE("rounds_to_target finds the first crossing, one-based") {
  std::vector<double> history{0.10, 0.20, 0.30};
  CHECK(rounds_to_target(history, 0.25) == std::optional<std::size_t>{3});
  CHECK(rounds_to_target(history, 0.10) == std::optional<std::size_t>{1});
  CHECK(rounds_to_target(history, 0.15) == std::optional<std::size_t>{2});
  CHECK_FALSE(rounds_to_target(history, 0.35).has_value());

  // Non-monotone history: the first crossing counts, later dips are ignored.
  std::vector<double> bumpy{0.1, 0.4, 0.2, 0.5};
  CHECK(rounds_to_target(bumpy, 0.3) == std::optional<std::size_t>{2});
  CHECK(rounds_to_target(bumpy, 1.0) == std::nullopt);
}

TEST_CASE("rounds_to_target agrees with a brute-force scan on random histories") {
  Rng rng = make_rng(8);
  std::uniform_real_distribution<double> acc(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, 40);
  for (int instance = 0; instance < 200; ++instance) {
    std::vector<double> history(len(rng));
    for (double& v : history) v = acc(rng);
    double target = std::max(1e-6, acc(rng));
    std::optional<std::size_t> brute;
    for (std::size_t i = 0; i < history.size(); ++i) {
      if (history[i] >= target) {
        brute = i + 1;
        break;
      }
    }
    CHECK(rounds_to_target(history, target) == brute);
  }
}

TEST_CASE("rounds_to_target validates its inputs") {
  std::vector<double> empty;
  CHECK_THROWS_AS(rounds_to_target(empty, 0.5), std::invalid_argument);
  std::vector<double> history{0.5};
  CHECK_THROWS_AS(rounds_to_target(history, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(rounds_to_target(history, 1.5), std::invalid_argument);
  CHECK_NOTHROW(rounds_to_target(history, 1.0));
}
