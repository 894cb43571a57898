#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "twinsight/matrix.hpp"
#include "twinsight/rng.hpp"

namespace twinsight {

enum class Activation { kRelu, kTanh };
enum class HeadKind { kClassifier, kEmbedding };

// Layer-shape descriptor for an MLP: a stack of fully connected layers with
// `activation` on every hidden layer and a linear head. The encoder is every
// layer but the last; the head is the last layer.
struct MlpSpec {
  std::vector<std::size_t> widths;  // input dim, hidden dims..., output dim
  Activation activation = Activation::kRelu;
  HeadKind head = HeadKind::kClassifier;

  std::size_t layer_count() const { return widths.size() - 1; }
  std::size_t input_dim() const { return widths.front(); }
  std::size_t output_dim() const { return widths.back(); }
  // Dimension of the encoder output (the penultimate representation).
  std::size_t encoder_dim() const { return widths[widths.size() - 2]; }
  std::size_t param_count() const;
  void validate() const;

  bool operator==(const MlpSpec&) const = default;
};

// Flat parameter vector plus its shape descriptor. Layer l occupies a
// contiguous block: (in x out) weights row-major, then out biases.
struct ModelParams {
  MlpSpec spec;
  std::vector<double> values;

  static ModelParams zeros(const MlpSpec& spec);
  // He init for relu, Xavier for tanh; biases zero.
  static ModelParams random_init(const MlpSpec& spec, Rng& rng);

  std::size_t layer_offset(std::size_t layer) const;
  std::span<double> weights(std::size_t layer);
  std::span<const double> weights(std::size_t layer) const;
  std::span<double> bias(std::size_t layer);
  std::span<const double> bias(std::size_t layer) const;
  // Materializes layer weights as an (in x out) matrix.
  Matrix weight_matrix(std::size_t layer) const;

  bool operator==(const ModelParams&) const = default;
};

// Everything the backward pass needs: the input batch plus per-layer pre- and
// post-activation matrices (post.back() is the linear head output).
struct ForwardTrace {
  Matrix input;
  std::vector<Matrix> pre;
  std::vector<Matrix> post;

  const Matrix& output() const { return post.back(); }
  // Post-activation of the last hidden layer; the raw input when the network
  // is a single linear layer.
  const Matrix& encoder_output() const {
    return post.size() >= 2 ? post[post.size() - 2] : input;
  }
};

ForwardTrace forward(const ModelParams& params, const Matrix& batch);

// Backpropagates `output_grad` (dLoss/dOutput) through the trace and returns
// the flat parameter gradient.
std::vector<double> backward(const ModelParams& params, const ForwardTrace& trace,
                             const Matrix& output_grad);

// Backpropagates a gradient applied at the encoder output. Head-layer entries
// of the result are zero.
std::vector<double> backward_from_encoder(const ModelParams& params, const ForwardTrace& trace,
                                          const Matrix& encoder_grad);

struct SgdConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  void validate() const;
  bool operator==(const SgdConfig&) const = default;
};

// Classical SGD with momentum; weight decay is added to the gradient before
// the velocity update:
//   v <- momentum*v + grad + weight_decay*params
//   params <- params - learning_rate*v
struct SgdState {
  SgdConfig config;
  std::vector<double> velocity;

  SgdState(SgdConfig cfg, std::size_t param_count)
      : config(cfg), velocity(param_count, 0.0) {}
};

void sgd_step(ModelParams& params, std::span<const double> grad, SgdState& state);

}  // namespace twinsight
