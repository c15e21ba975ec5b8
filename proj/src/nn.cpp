#include "fedsplit/nn.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedsplit/error.hpp"
#include "fedsplit/random.hpp"

namespace fedsplit {

namespace {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Tensor dense_forward(const Layer& layer, const Tensor& x) {
  const std::size_t batch = x.rows();
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  if (x.cols() != in) {
    throw DimensionError("dense layer expects " + std::to_string(in) + " input columns, got " +
                         std::to_string(x.cols()));
  }
  Tensor y({batch, out});
  for (std::size_t b = 0; b < batch; ++b) {
    auto y_row = y.row(b);
    const auto x_row = x.row(b);
    std::copy(layer.bias.data().begin(), layer.bias.data().end(), y_row.begin());
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = x_row[i];
      const auto w_row = layer.weight.row(i);
      for (std::size_t o = 0; o < out; ++o) y_row[o] += xi * w_row[o];
    }
  }
  return y;
}

Tensor layer_forward(const Layer& layer, const Tensor& x) {
  switch (layer.kind) {
    case LayerKind::Dense:
      return dense_forward(layer, x);
    case LayerKind::ReLU: {
      Tensor y = x;
      for (auto& v : y.data()) v = v > 0.0 ? v : 0.0;
      return y;
    }
    case LayerKind::Sigmoid: {
      Tensor y = x;
      for (auto& v : y.data()) v = sigmoid(v);
      return y;
    }
  }
  throw ProtocolError("unknown layer kind");
}

// Returns d(loss)/d(input); writes parameter gradients for dense layers.
Tensor layer_backward(const Layer& layer, const Tensor& input, const Tensor& dy, Tensor* dweight, Tensor* dbias) {
  switch (layer.kind) {
    case LayerKind::Dense: {
      const std::size_t batch = input.rows();
      const std::size_t in = layer.in_dim();
      const std::size_t out = layer.out_dim();
      *dweight = Tensor({in, out});
      *dbias = Tensor({out});
      Tensor dx({batch, in});
      for (std::size_t b = 0; b < batch; ++b) {
        const auto x_row = input.row(b);
        const auto dy_row = dy.row(b);
        for (std::size_t i = 0; i < in; ++i) {
          auto dw_row = dweight->row(i);
          const double xi = x_row[i];
          for (std::size_t o = 0; o < out; ++o) dw_row[o] += xi * dy_row[o];
        }
        for (std::size_t o = 0; o < out; ++o) (*dbias)[o] += dy_row[o];
        auto dx_row = dx.row(b);
        for (std::size_t i = 0; i < in; ++i) {
          const auto w_row = layer.weight.row(i);
          double acc = 0.0;
          for (std::size_t o = 0; o < out; ++o) acc += dy_row[o] * w_row[o];
          dx_row[i] = acc;
        }
      }
      return dx;
    }
    case LayerKind::ReLU: {
      Tensor dx = dy;
      for (std::size_t i = 0; i < dx.numel(); ++i) {
        if (!(input[i] > 0.0)) dx[i] = 0.0;
      }
      return dx;
    }
    case LayerKind::Sigmoid: {
      Tensor dx = dy;
      for (std::size_t i = 0; i < dx.numel(); ++i) {
        const double s = sigmoid(input[i]);
        dx[i] *= s * (1.0 - s);
      }
      return dx;
    }
  }
  throw ProtocolError("unknown layer kind");
}

}  // namespace

Layer Layer::dense(Tensor weight, Tensor bias) {
  if (weight.rank() != 2 || bias.rank() != 1 || bias.shape()[0] != weight.shape()[1]) {
    throw DimensionError("dense layer needs weight [in, out] and bias [out], got " + shape_string(weight.shape()) +
                         " and " + shape_string(bias.shape()));
  }
  return Layer{LayerKind::Dense, std::move(weight), std::move(bias)};
}

SequentialModel::SequentialModel(std::vector<Layer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ConfigError("a model needs at least one layer");
  std::optional<std::size_t> width;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Layer& layer = layers_[i];
    if (!layer.has_parameters()) continue;
    if (layer.weight.rank() != 2 || layer.bias.rank() != 1 || layer.bias.shape()[0] != layer.out_dim()) {
      throw DimensionError("layer " + std::to_string(i) + " has malformed parameters");
    }
    if (width && *width != layer.in_dim()) {
      throw DimensionError("layer " + std::to_string(i) + " expects width " + std::to_string(layer.in_dim()) +
                           " but previous layer produces " + std::to_string(*width));
    }
    width = layer.out_dim();
  }
}

std::optional<std::size_t> SequentialModel::input_dim() const {
  for (const auto& layer : layers_) {
    if (layer.has_parameters()) return layer.in_dim();
  }
  return std::nullopt;
}

std::optional<std::size_t> SequentialModel::output_dim() const {
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
    if (it->has_parameters()) return it->out_dim();
  }
  return std::nullopt;
}

std::size_t SequentialModel::parameter_count() const {
  std::size_t count = 0;
  for (const auto& layer : layers_) {
    if (layer.has_parameters()) count += layer.weight.numel() + layer.bias.numel();
  }
  return count;
}

ParameterSet SequentialModel::parameters() const {
  ParameterSet params;
  for (const auto& layer : layers_) {
    if (!layer.has_parameters()) continue;
    params.push_back(layer.weight);
    params.push_back(layer.bias);
  }
  return params;
}

std::vector<Tensor*> SequentialModel::mutable_parameters() {
  std::vector<Tensor*> params;
  for (auto& layer : layers_) {
    if (!layer.has_parameters()) continue;
    params.push_back(&layer.weight);
    params.push_back(&layer.bias);
  }
  return params;
}

void SequentialModel::set_parameters(const ParameterSet& params) {
  auto targets = mutable_parameters();
  if (targets.size() != params.size()) {
    throw DimensionError("expected " + std::to_string(targets.size()) + " parameter tensors, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(*targets[i], params[i], "set_parameters");
  for (std::size_t i = 0; i < params.size(); ++i) *targets[i] = params[i];
}

bool bitwise_equal(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bitwise_equal(a[i], b[i])) return false;
  }
  return true;
}

bool bitwise_equal(const SequentialModel& a, const SequentialModel& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.layers()[i].kind != b.layers()[i].kind) return false;
  }
  return bitwise_equal(a.parameters(), b.parameters());
}

double max_abs_diff(const ParameterSet& a, const ParameterSet& b) {
  if (a.size() != b.size()) throw DimensionError("parameter sets differ in length");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs_diff(a[i], b[i]));
  return worst;
}

SequentialModel init_model(std::span<const std::size_t> layer_dims, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least an input and an output width");
  if (layer_dims.back() != kNumLabels) {
    throw ConfigError("classification models must end in " + std::to_string(kNumLabels) + " outputs");
  }
  for (auto d : layer_dims) {
    if (d == 0) throw ConfigError("layer widths must be positive");
  }
  Rng rng(seed);
  std::vector<Layer> layers;
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    const std::size_t in = layer_dims[i];
    const std::size_t out = layer_dims[i + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    Tensor weight({in, out});
    for (auto& w : weight.data()) w = rng.uniform(-bound, bound);
    layers.push_back(Layer::dense(std::move(weight), Tensor({out})));
    layers.push_back(i + 2 < layer_dims.size() ? Layer::relu() : Layer::sigmoid());
  }
  return SequentialModel(std::move(layers));
}

std::pair<Tensor, ForwardCache> forward(const SequentialModel& model, const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("forward expects a [batch, features] input, got " + shape_string(x.shape()));
  if (const auto in = model.input_dim(); in && *in != x.cols() && model.layers().front().has_parameters()) {
    throw DimensionError("model expects " + std::to_string(*in) + " features, got " + std::to_string(x.cols()));
  }
  x.require_finite("forward input");
  ForwardCache cache;
  cache.inputs.reserve(model.size());
  Tensor current = x;
  for (const auto& layer : model.layers()) {
    Tensor next = layer_forward(layer, current);
    cache.inputs.push_back(std::move(current));
    current = std::move(next);
  }
  current.require_finite("forward output");
  return {std::move(current), std::move(cache)};
}

Tensor predict(const SequentialModel& model, const Tensor& x) { return forward(model, x).first; }

LossResult bce_loss(const Tensor& y_hat, const Tensor& target) {
  require_same_shape(y_hat, target, "bce_loss");
  y_hat.require_finite("bce_loss predictions");
  for (double t : target.data()) {
    if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("bce_loss targets must lie in [0, 1], got " + std::to_string(t));
  }
  const double scale = 1.0 / static_cast<double>(y_hat.numel());
  LossResult result{0.0, Tensor(y_hat.shape())};
  double total = 0.0;
  for (std::size_t i = 0; i < y_hat.numel(); ++i) {
    const double p = y_hat[i];
    const double t = target[i];
    const double q = 1.0 - p;
    double term = 0.0;
    double grad = 0.0;
    if (t > 0.0) {
      term += t * std::log(std::max(p, kBceEpsilon));
      if (p > kBceEpsilon) grad -= t / p;
    }
    if (t < 1.0) {
      term += (1.0 - t) * std::log(std::max(q, kBceEpsilon));
      if (q > kBceEpsilon) grad += (1.0 - t) / q;
    }
    total -= term;
    result.grad[i] = grad * scale;
  }
  result.loss = total * scale + 0.0;
  result.grad.require_finite("bce_loss gradient");
  return result;
}

GradientSet backward(const SequentialModel& model, const ForwardCache& cache, const Tensor& dloss_dyhat) {
  const auto& layers = model.layers();
  if (cache.inputs.size() != layers.size()) {
    throw ProtocolError("forward cache holds " + std::to_string(cache.inputs.size()) + " activations for a " +
                        std::to_string(layers.size()) + "-layer model");
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& in = cache.inputs[i];
    if (in.rank() != 2 || in.rows() != dloss_dyhat.rows()) {
      throw ProtocolError("forward cache does not match the gradient batch");
    }
    if (layers[i].has_parameters() && in.cols() != layers[i].in_dim()) {
      throw ProtocolError("forward cache was produced by a different model (layer " + std::to_string(i) + ")");
    }
  }
  const Tensor& last_in = cache.inputs.back();
  const std::size_t out_cols = layers.back().has_parameters() ? layers.back().out_dim() : last_in.cols();
  if (dloss_dyhat.cols() != out_cols) {
    throw DimensionError("gradient has " + std::to_string(dloss_dyhat.cols()) + " columns, model outputs " +
                         std::to_string(out_cols));
  }

  GradientSet grads;
  std::vector<Tensor> reversed_params;
  Tensor upstream = dloss_dyhat;
  for (std::size_t i = layers.size(); i-- > 0;) {
    Tensor dweight;
    Tensor dbias;
    upstream = layer_backward(layers[i], cache.inputs[i], upstream, &dweight, &dbias);
    if (layers[i].has_parameters()) {
      reversed_params.push_back(std::move(dbias));
      reversed_params.push_back(std::move(dweight));
    }
  }
  grads.params.assign(std::make_move_iterator(reversed_params.rbegin()),
                      std::make_move_iterator(reversed_params.rend()));
  grads.input = std::move(upstream);
  for (const auto& g : grads.params) g.require_finite("parameter gradient");
  grads.input.require_finite("input gradient");
  return grads;
}

void sgd_update(SequentialModel& model, const ParameterSet& grads, double lr) {
  auto params = model.mutable_parameters();
  if (params.size() != grads.size()) {
    throw DimensionError("gradient set has " + std::to_string(grads.size()) + " tensors, model has " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(*params[i], grads[i], "sgd_update");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i]->data();
    const auto g = grads[i].data();
    for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    params[i]->require_finite("sgd_update result");
  }
}

SequentialModel sgd_step(SequentialModel model, const GradientSet& grads, double lr) {
  sgd_update(model, grads.params, lr);
  return model;
}

ModelPartition split_model(const SequentialModel& model, std::size_t cut_m, std::optional<std::size_t> cut_n) {
  const auto& layers = model.layers();
  if (layers.size() < 2) throw ConfigError("cannot split a model with fewer than two layers");
  const std::size_t last = layers.size() - 1;
  if (cut_m == 0 || cut_m >= last) {
    throw ConfigError("cut_m must satisfy 0 < cut_m < " + std::to_string(last) + ", got " + std::to_string(cut_m));
  }
  if (cut_n && (*cut_n <= cut_m || *cut_n >= last)) {
    throw ConfigError("cut_n must satisfy cut_m < cut_n < " + std::to_string(last) + ", got " +
                      std::to_string(*cut_n));
  }
  auto slice = [&](std::size_t first, std::size_t last_inclusive) {
    return SequentialModel(std::vector<Layer>(layers.begin() + static_cast<std::ptrdiff_t>(first),
                                              layers.begin() + static_cast<std::ptrdiff_t>(last_inclusive + 1)));
  };
  ModelPartition partition;
  partition.cut_m = cut_m;
  partition.cut_n = cut_n;
  partition.front = slice(0, cut_m);
  partition.server = slice(cut_m + 1, cut_n.value_or(last));
  if (cut_n) partition.back = slice(*cut_n + 1, last);
  return partition;
}

SequentialModel concat(std::span<const SequentialModel> segments) {
  std::vector<Layer> layers;
  for (const auto& segment : segments) layers.insert(layers.end(), segment.layers().begin(), segment.layers().end());
  return SequentialModel(std::move(layers));
}

SequentialModel concat(const ModelPartition& partition) {
  std::vector<SequentialModel> segments{partition.front, partition.server};
  if (partition.back) segments.push_back(*partition.back);
  return concat(segments);
}

GradientSet finite_diff_grad(const SequentialModel& model, const Tensor& x, const Tensor& target, double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be positive");
  auto loss_at = [&](const SequentialModel& m, const Tensor& input) {
    return bce_loss(predict(m, input), target).loss;
  };

  GradientSet grads;
  SequentialModel probe = model;
  auto params = probe.mutable_parameters();
  for (Tensor* param : params) {
    Tensor g(param->shape());
    for (std::size_t j = 0; j < param->numel(); ++j) {
      const double original = (*param)[j];
      (*param)[j] = original + step;
      const double up = loss_at(probe, x);
      (*param)[j] = original - step;
      const double down = loss_at(probe, x);
      (*param)[j] = original;
      g[j] = (up - down) / (2.0 * step);
    }
    grads.params.push_back(std::move(g));
  }

  Tensor probe_x = x;
  grads.input = Tensor(x.shape());
  for (std::size_t j = 0; j < x.numel(); ++j) {
    const double original = probe_x[j];
    probe_x[j] = original + step;
    const double up = loss_at(model, probe_x);
    probe_x[j] = original - step;
    const double down = loss_at(model, probe_x);
    probe_x[j] = original;
    grads.input[j] = (up - down) / (2.0 * step);
  }
  return grads;
}

}  // namespace fedsplit
