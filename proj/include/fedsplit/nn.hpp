#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "fedsplit/tensor.hpp"

namespace fedsplit {

inline constexpr std::size_t kNumLabels = 14;

enum class LayerKind { Dense, ReLU, Sigmoid };

// One network layer. Dense layers own a weight [in, out] and a bias [out];
// activation layers carry no parameters.
struct Layer {
  LayerKind kind = LayerKind::ReLU;
  Tensor weight;
  Tensor bias;

  static Layer dense(Tensor weight, Tensor bias);
  static Layer relu() { return Layer{LayerKind::ReLU, {}, {}}; }
  static Layer sigmoid() { return Layer{LayerKind::Sigmoid, {}, {}}; }

  bool has_parameters() const { return kind == LayerKind::Dense; }
  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }
};

// Parameters of a model in layer order: W0, b0, W1, b1, ... (dense only).
using ParameterSet = std::vector<Tensor>;

// Ordered layer stack. Also used for the segments produced by split_model,
// which is why a single layer is accepted here; init_model is what enforces
// the classification shape (>= 2 layers, 14 sigmoid outputs).
class SequentialModel {
 public:
  SequentialModel() = default;
  explicit SequentialModel(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  std::size_t size() const { return layers_.size(); }

  // Width expected at the input, if any dense layer fixes it.
  std::optional<std::size_t> input_dim() const;
  std::optional<std::size_t> output_dim() const;

  std::size_t parameter_count() const;
  ParameterSet parameters() const;
  void set_parameters(const ParameterSet& params);

  // Mutable access for in-place updates; shapes must not change.
  std::vector<Tensor*> mutable_parameters();

 private:
  std::vector<Layer> layers_;
};

bool bitwise_equal(const SequentialModel& a, const SequentialModel& b);
bool bitwise_equal(const ParameterSet& a, const ParameterSet& b);
double max_abs_diff(const ParameterSet& a, const ParameterSet& b);

// Input of every layer, captured during forward for the matching backward.
struct ForwardCache {
  std::vector<Tensor> inputs;
};

struct GradientSet {
  ParameterSet params;  // shape-matched to SequentialModel::parameters()
  Tensor input;         // d(loss)/d(segment input)
};

struct ModelPartition {
  SequentialModel front;                // layers 0..=cut_m (client)
  SequentialModel server;               // layers cut_m+1..=cut_n, or ..=N for vanilla
  std::optional<SequentialModel> back;  // layers cut_n+1..=N (client, U-shaped only)
  std::size_t cut_m = 0;
  std::optional<std::size_t> cut_n;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;  // d(loss)/d(y_hat)
};

inline constexpr double kBceEpsilon = 1e-12;

// Dense layers with ReLU between them and a Sigmoid head. Weights are
// U(-sqrt(6/in), sqrt(6/in)); biases are zero.
SequentialModel init_model(std::span<const std::size_t> layer_dims, std::uint64_t seed);

std::pair<Tensor, ForwardCache> forward(const SequentialModel& model, const Tensor& x);

// Prediction only; same arithmetic as forward().
Tensor predict(const SequentialModel& model, const Tensor& x);

// Mean over batch and labels of -[t ln p + (1-t) ln(1-p)], with each log
// argument floored at kBceEpsilon. Terms whose target weight is exactly zero
// are skipped, so binary targets hit exactly give a loss of exactly 0.
LossResult bce_loss(const Tensor& y_hat, const Tensor& target);

GradientSet backward(const SequentialModel& model, const ForwardCache& cache, const Tensor& dloss_dyhat);

// p <- p - lr * g for every parameter.
void sgd_update(SequentialModel& model, const ParameterSet& grads, double lr);
SequentialModel sgd_step(SequentialModel model, const GradientSet& grads, double lr);

ModelPartition split_model(const SequentialModel& model, std::size_t cut_m,
                           std::optional<std::size_t> cut_n = std::nullopt);
SequentialModel concat(std::span<const SequentialModel> segments);
SequentialModel concat(const ModelPartition& partition);

// Central differences of bce_loss(forward(model, x), target) for every
// parameter and every input element.
GradientSet finite_diff_grad(const SequentialModel& model, const Tensor& x, const Tensor& target, double step);

}  // namespace fedsplit
