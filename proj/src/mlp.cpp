#include "esma/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esma/errors.hpp"
#include "esma/kernels.hpp"
#include "esma/loss.hpp"
#include "esma/rng.hpp"

namespace esma {

MlpClassifier::MlpClassifier(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw InvalidInput("MlpClassifier: no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.rows == 0 || l.weight.cols == 0) throw InvalidInput("MlpClassifier: empty layer");
    if (l.weight.data.size() != l.weight.rows * l.weight.cols || l.bias.size() != l.out_dim()) {
      throw InvalidInput("MlpClassifier: layer " + std::to_string(i) + " has inconsistent shapes");
    }
    if (i > 0 && layers_[i - 1].out_dim() != l.in_dim()) {
      throw InvalidInput("MlpClassifier: layer " + std::to_string(i) + " does not chain");
    }
  }
  if (layers_.back().activation != Activation::identity) {
    throw InvalidInput("MlpClassifier: final layer must emit raw logits");
  }
}

MlpClassifier MlpClassifier::initialize(std::span<const std::size_t> widths, std::uint64_t seed) {
  if (widths.size() < 2) throw InvalidInput("MlpClassifier: need at least input and output width");
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t fan_in = widths[i];
    const std::size_t fan_out = widths[i + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    DenseLayer layer;
    layer.weight = Tensor2(fan_out, fan_in);
    for (double& w : layer.weight.data) w = u(rng);
    layer.bias.assign(fan_out, 0.0);
    layer.activation = (i + 2 == widths.size()) ? Activation::identity : Activation::relu;
    layers.push_back(std::move(layer));
  }
  return MlpClassifier(std::move(layers));
}

std::size_t MlpClassifier::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l.weight.data.size() + l.bias.size();
  return n;
}

namespace {

// z = x W^T + b, optionally ReLU'd in place.
Tensor2 dense_forward(const DenseLayer& layer, const Tensor2& x) {
  Tensor2 z(x.rows, layer.out_dim());
  const auto& k = kernels::active();
  // Output-major order keeps one weight row hot across the batch.
  for (std::size_t o = 0; o < layer.out_dim(); ++o) {
    const double* wo = layer.weight.data.data() + o * layer.in_dim();
    for (std::size_t i = 0; i < x.rows; ++i) {
      z.data[i * z.cols + o] = k.dot(wo, x.data.data() + i * x.cols, layer.in_dim()) + layer.bias[o];
    }
  }
  if (layer.activation == Activation::relu) {
    for (double& v : z.data) v = v > 0.0 ? v : 0.0;
  }
  return z;
}

void check_batch(const MlpClassifier& model, const Tensor2& batch) {
  if (model.layers().empty()) throw InvalidInput("forward: empty model");
  if (batch.cols != model.input_dim()) throw InvalidInput("forward: batch width != input dim");
}

}  // namespace

Tensor2 forward(const MlpClassifier& model, const Tensor2& batch) {
  check_batch(model, batch);
  Tensor2 h = batch;
  for (const auto& layer : model.layers()) h = dense_forward(layer, h);
  return h;
}

std::vector<double> forward_point(const MlpClassifier& model, std::span<const double> x) {
  Tensor2 one(1, x.size(), std::vector<double>(x.begin(), x.end()));
  return forward(model, one).data;
}

GradientBundle backward_from_logits(const MlpClassifier& model, const Tensor2& batch,
                                    const Tensor2& dlogits, GradientParts parts) {
  check_batch(model, batch);
  if (dlogits.rows != batch.rows || dlogits.cols != model.output_dim()) {
    throw InvalidInput("backward: logit gradient shape mismatch");
  }
  const auto& layers = model.layers();
  const std::size_t n = batch.rows;

  // activations[l] is the input to layer l (post-activation of layer l-1).
  std::vector<Tensor2> activations;
  activations.reserve(layers.size());
  activations.push_back(batch);
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    activations.push_back(dense_forward(layers[l], activations.back()));
  }

  const bool want_params = parts != GradientParts::inputs;
  const bool want_inputs = parts != GradientParts::parameters;
  const auto& k = kernels::active();

  GradientBundle out;
  if (want_params) {
    out.layers.resize(layers.size());
    for (std::size_t l = 0; l < layers.size(); ++l) {
      out.layers[l].weight = Tensor2(layers[l].out_dim(), layers[l].in_dim());
      out.layers[l].bias.assign(layers[l].out_dim(), 0.0);
    }
  }

  Tensor2 delta = dlogits;  // gradient w.r.t. pre-activation of current layer
  const double inv_n = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  for (std::size_t li = layers.size(); li-- > 0;) {
    const DenseLayer& layer = layers[li];
    const Tensor2& a = activations[li];
    if (want_params) {
      auto& g = out.layers[li];
      for (std::size_t o = 0; o < layer.out_dim(); ++o) {
        double* go = g.weight.data.data() + o * layer.in_dim();
        for (std::size_t i = 0; i < n; ++i) {
          const double d = delta.data[i * delta.cols + o];
          if (d == 0.0) continue;
          k.axpy(d * inv_n, a.data.data() + i * a.cols, go, layer.in_dim());
          g.bias[o] += d * inv_n;
        }
      }
    }
    if (li == 0 && !want_inputs) break;
    Tensor2 prev(n, layer.in_dim());
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      const double* wo = layer.weight.data.data() + o * layer.in_dim();
      for (std::size_t i = 0; i < n; ++i) {
        const double d = delta.data[i * delta.cols + o];
        if (d == 0.0) continue;
        k.axpy(d, wo, prev.data.data() + i * prev.cols, layer.in_dim());
      }
    }
    if (li > 0 && layers[li - 1].activation == Activation::relu) {
      for (std::size_t j = 0; j < prev.data.size(); ++j) {
        if (!(a.data[j] > 0.0)) prev.data[j] = 0.0;
      }
    }
    delta = std::move(prev);
  }
  if (want_inputs) out.input = std::move(delta);
  return out;
}

LossAndGradient backward(const MlpClassifier& model, const Tensor2& batch,
                         std::span<const ClassIndex> labels, GradientParts parts) {
  if (labels.size() != batch.rows) throw InvalidInput("backward: label count != batch rows");
  const Tensor2 logits = forward(model, batch);
  Tensor2 dlogits(batch.rows, model.output_dim());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.rows; ++i) {
    total += softmax_ce(logits.row(i), labels[i]);
    const auto g = softmax_ce_grad(logits.row(i), labels[i]);
    std::copy(g.begin(), g.end(), dlogits.row(i).begin());
  }
  LossAndGradient out;
  out.mean_loss = batch.rows ? total / static_cast<double>(batch.rows) : 0.0;
  out.grads = backward_from_logits(model, batch, dlogits, parts);
  return out;
}

double mean_loss(const MlpClassifier& model, const Tensor2& batch,
                 std::span<const ClassIndex> labels) {
  if (labels.size() != batch.rows) throw InvalidInput("mean_loss: label count != batch rows");
  const Tensor2 logits = forward(model, batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.rows; ++i) total += softmax_ce(logits.row(i), labels[i]);
  return batch.rows ? total / static_cast<double>(batch.rows) : 0.0;
}

std::vector<double> input_gradient(const MlpClassifier& model, std::span<const double> x,
                                   std::span<const double> dlogits) {
  Tensor2 one(1, x.size(), std::vector<double>(x.begin(), x.end()));
  Tensor2 d(1, dlogits.size(), std::vector<double>(dlogits.begin(), dlogits.end()));
  return backward_from_logits(model, one, d, GradientParts::inputs).input.data;
}

}  // namespace esma
