#include "twinsight/mlp.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "twinsight/errors.hpp"

namespace twinsight {

void MlpSpec::validate() const {
  if (widths.size() < 2) {
    throw std::invalid_argument("MlpSpec: need at least 2 widths (input, output)");
  }
  for (std::size_t w : widths) {
    if (w < 1) throw std::invalid_argument("MlpSpec: all widths must be >= 1");
  }
}

std::size_t MlpSpec::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    n += widths[l] * widths[l + 1] + widths[l + 1];
  }
  return n;
}

ModelParams ModelParams::zeros(const MlpSpec& spec) {
  spec.validate();
  return ModelParams{spec, std::vector<double>(spec.param_count(), 0.0)};
}

ModelParams ModelParams::random_init(const MlpSpec& spec, Rng& rng) {
  ModelParams p = zeros(spec);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const double fan_in = static_cast<double>(spec.widths[l]);
    const double fan_out = static_cast<double>(spec.widths[l + 1]);
    const double stddev = spec.activation == Activation::kRelu
                              ? std::sqrt(2.0 / fan_in)
                              : std::sqrt(2.0 / (fan_in + fan_out));
    for (double& w : p.weights(l)) w = stddev * unit(rng);
  }
  return p;
}

std::size_t ModelParams::layer_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) {
    off += spec.widths[l] * spec.widths[l + 1] + spec.widths[l + 1];
  }
  return off;
}

std::span<double> ModelParams::weights(std::size_t layer) {
  return {values.data() + layer_offset(layer), spec.widths[layer] * spec.widths[layer + 1]};
}

std::span<const double> ModelParams::weights(std::size_t layer) const {
  return {values.data() + layer_offset(layer), spec.widths[layer] * spec.widths[layer + 1]};
}

std::span<double> ModelParams::bias(std::size_t layer) {
  return {values.data() + layer_offset(layer) + spec.widths[layer] * spec.widths[layer + 1],
          spec.widths[layer + 1]};
}

std::span<const double> ModelParams::bias(std::size_t layer) const {
  return {values.data() + layer_offset(layer) + spec.widths[layer] * spec.widths[layer + 1],
          spec.widths[layer + 1]};
}

Matrix ModelParams::weight_matrix(std::size_t layer) const {
  Matrix w(spec.widths[layer], spec.widths[layer + 1]);
  const auto src = weights(layer);
  std::copy(src.begin(), src.end(), w.data.begin());
  return w;
}

namespace {

double activate(Activation act, double x) {
  // relu'(0) is taken as 0 (subgradient convention).
  return act == Activation::kRelu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

double activate_grad(Activation act, double pre, double post) {
  return act == Activation::kRelu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0 - post * post;
}

// pre = x*W + b
Matrix linear_forward(const Matrix& x, const ModelParams& p, std::size_t layer) {
  const std::size_t in = p.spec.widths[layer];
  const std::size_t out = p.spec.widths[layer + 1];
  const auto w = p.weights(layer);
  const auto b = p.bias(layer);
  Matrix y(x.rows, out);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double* yrow = y.data.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) yrow[j] = b[j];
    const double* xrow = x.data.data() + i * in;
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xrow[k];
      if (xv == 0.0) continue;
      const double* wrow = w.data() + k * out;
      for (std::size_t j = 0; j < out; ++j) yrow[j] += xv * wrow[j];
    }
  }
  return y;
}

// Propagates delta (dLoss/dPre of `layer`) into parameter gradients and
// returns dLoss/dInput of that layer.
Matrix linear_backward(const Matrix& layer_input, const Matrix& delta, const ModelParams& p,
                       std::size_t layer, std::vector<double>& grad) {
  const std::size_t in = p.spec.widths[layer];
  const std::size_t out = p.spec.widths[layer + 1];
  const std::size_t off = p.layer_offset(layer);
  // dW = input^T * delta
  for (std::size_t r = 0; r < layer_input.rows; ++r) {
    const double* xrow = layer_input.data.data() + r * in;
    const double* drow = delta.data.data() + r * out;
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xrow[k];
      if (xv == 0.0) continue;
      double* grow = grad.data() + off + k * out;
      for (std::size_t j = 0; j < out; ++j) grow[j] += xv * drow[j];
    }
  }
  // db = column sums of delta
  double* gb = grad.data() + off + in * out;
  for (std::size_t r = 0; r < delta.rows; ++r) {
    const double* drow = delta.data.data() + r * out;
    for (std::size_t j = 0; j < out; ++j) gb[j] += drow[j];
  }
  // dInput = delta * W^T
  const auto w = p.weights(layer);
  Matrix dx(layer_input.rows, in, 0.0);
  for (std::size_t r = 0; r < delta.rows; ++r) {
    const double* drow = delta.data.data() + r * out;
    double* xg = dx.data.data() + r * in;
    for (std::size_t k = 0; k < in; ++k) {
      const double* wrow = w.data() + k * out;
      double s = 0.0;
      for (std::size_t j = 0; j < out; ++j) s += drow[j] * wrow[j];
      xg[k] = s;
    }
  }
  return dx;
}

// Shared tail of backward()/backward_from_encoder(): walks hidden layers
// `last_hidden`..0 given dLoss/dPost of layer `last_hidden`.
void backward_hidden_chain(const ModelParams& params, const ForwardTrace& trace,
                           Matrix dpost, std::size_t last_hidden, std::vector<double>& grad) {
  const auto& spec = params.spec;
  for (std::size_t l = last_hidden + 1; l-- > 0;) {
    Matrix delta = dpost;
    const Matrix& pre = trace.pre[l];
    const Matrix& post = trace.post[l];
    for (std::size_t i = 0; i < delta.data.size(); ++i) {
      delta.data[i] *= activate_grad(spec.activation, pre.data[i], post.data[i]);
    }
    const Matrix& in = (l == 0) ? trace.input : trace.post[l - 1];
    dpost = linear_backward(in, delta, params, l, grad);
  }
}

}  // namespace

ForwardTrace forward(const ModelParams& params, const Matrix& batch) {
  const auto& spec = params.spec;
  spec.validate();
  if (batch.cols != spec.input_dim()) {
    throw std::invalid_argument("forward: batch has " + std::to_string(batch.cols) +
                                " columns, spec expects " + std::to_string(spec.input_dim()));
  }
  ForwardTrace trace;
  trace.input = batch;
  trace.pre.reserve(spec.layer_count());
  trace.post.reserve(spec.layer_count());
  const Matrix* x = &trace.input;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    trace.pre.push_back(linear_forward(*x, params, l));
    if (l + 1 < spec.layer_count()) {
      Matrix act = trace.pre.back();
      for (double& v : act.data) v = activate(spec.activation, v);
      trace.post.push_back(std::move(act));
    } else {
      trace.post.push_back(trace.pre.back());  // linear head
    }
    x = &trace.post.back();
  }
  ensure_finite(trace.output(), "forward output");
  return trace;
}

std::vector<double> backward(const ModelParams& params, const ForwardTrace& trace,
                             const Matrix& output_grad) {
  if (!output_grad.same_shape(trace.output())) {
    throw std::invalid_argument("backward: output_grad shape mismatch");
  }
  const std::size_t layers = params.spec.layer_count();
  std::vector<double> grad(params.values.size(), 0.0);
  const Matrix& head_in = (layers >= 2) ? trace.post[layers - 2] : trace.input;
  Matrix dpost = linear_backward(head_in, output_grad, params, layers - 1, grad);
  if (layers >= 2) {
    backward_hidden_chain(params, trace, std::move(dpost), layers - 2, grad);
  }
  return grad;
}

std::vector<double> backward_from_encoder(const ModelParams& params, const ForwardTrace& trace,
                                          const Matrix& encoder_grad) {
  if (!encoder_grad.same_shape(trace.encoder_output())) {
    throw std::invalid_argument("backward_from_encoder: gradient shape mismatch");
  }
  std::vector<double> grad(params.values.size(), 0.0);
  const std::size_t layers = params.spec.layer_count();
  if (layers >= 2) {
    backward_hidden_chain(params, trace, encoder_grad, layers - 2, grad);
  }
  // Single linear layer: the encoder is the identity, nothing to propagate.
  return grad;
}

void SgdConfig::validate() const {
  if (!(learning_rate >= 0.0)) throw std::invalid_argument("sgd: learning_rate must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw std::invalid_argument("sgd: momentum must be in [0,1)");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("sgd: weight_decay must be >= 0");
}

void sgd_step(ModelParams& params, std::span<const double> grad, SgdState& state) {
  const std::size_t n = params.values.size();
  if (grad.size() != n || state.velocity.size() != n) {
    throw std::invalid_argument("sgd_step: length mismatch");
  }
  const auto& cfg = state.config;
  for (std::size_t i = 0; i < n; ++i) {
    double v = cfg.momentum * state.velocity[i] + grad[i] + cfg.weight_decay * params.values[i];
    state.velocity[i] = v;
    params.values[i] -= cfg.learning_rate * v;
  }
  ensure_finite(std::span<const double>(params.values), "sgd_step result");
}

}  // namespace twinsight
