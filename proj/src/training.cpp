#include "fedsplit/training.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "fedsplit/error.hpp"
#include "fedsplit/random.hpp"

namespace fedsplit {

namespace {

constexpr std::uint64_t kTargetStream = 0x7461726765747300ULL;
constexpr std::uint64_t kBatchStream = 0x6261746368657300ULL;

}  // namespace

LocalData materialize(std::span<const Sample> samples, std::size_t client_id, std::string name,
                      const LabelPolicy& policy, std::uint64_t seed) {
  LocalData data;
  data.client_id = client_id;
  data.name = std::move(name);
  if (samples.empty()) return data;
  const std::size_t n = samples.size();
  const std::size_t d = samples.front().features.size();
  data.features = Tensor({n, d});
  data.targets = Tensor({n, kNumLabels});
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = samples[i];
    if (s.features.size() != d) throw DimensionError("inconsistent feature width in client data");
    std::copy(s.features.begin(), s.features.end(), data.features.row(i).begin());
    Rng rng(mix_seed(mix_seed(seed, kTargetStream), static_cast<std::uint64_t>(s.id)));
    const Tensor t = apply_label_policy(s.labels, policy, rng);
    std::copy(t.data().begin(), t.data().end(), data.targets.row(i).begin());
  }
  return data;
}

LocalData materialize(const ClientDataset& client, const LabelPolicy& policy, std::uint64_t seed) {
  return materialize(client.samples, client.client_id, client.name, policy, seed);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t stream, std::size_t epoch) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(mix_seed(mix_seed(seed, kBatchStream), stream), epoch));
  rng.shuffle(std::span(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

Batch gather(const LocalData& data, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ProtocolError("empty batch");
  const std::size_t d = data.features.cols();
  Batch batch{Tensor({rows.size(), d}), Tensor({rows.size(), kNumLabels})};
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto f = data.features.row(rows[i]);
    const auto t = data.targets.row(rows[i]);
    std::copy(f.begin(), f.end(), batch.x.row(i).begin());
    std::copy(t.begin(), t.end(), batch.y.row(i).begin());
  }
  return batch;
}

std::vector<Batch> epoch_batch_data(const LocalData& data, std::size_t batch_size, std::uint64_t seed,
                                    std::size_t epoch) {
  std::vector<Batch> out;
  for (const auto& rows : epoch_batches(data.size(), batch_size, seed, data.client_id, epoch)) {
    out.push_back(gather(data, rows));
  }
  return out;
}

EvalSet make_eval_set(const Dataset& val) {
  if (val.samples.empty()) throw ConfigError("validation set is empty");
  EvalSet eval;
  const std::size_t n = val.size();
  eval.features = Tensor({n, val.dim});
  eval.truths = Tensor({n, kNumLabels});
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& s = val.samples[i];
    std::copy(s.features.begin(), s.features.end(), eval.features.row(i).begin());
    for (std::size_t l = 0; l < kNumLabels; ++l) eval.truths.at(i, l) = is_positive(s.labels[l]) ? 1.0 : 0.0;
  }
  eval.target_columns = val.target_indices();
  eval.target_names = val.target_labels;
  return eval;
}

double Evaluation::score() const {
  const auto mean = mean_auc(report);
  return mean ? *mean : -std::numeric_limits<double>::infinity();
}

Evaluation evaluate_predictions(const Tensor& predictions, const EvalSet& eval) {
  Evaluation result;
  result.loss = bce_loss(predictions, eval.truths).loss;
  result.report = score_predictions(predictions, eval.truths, eval.target_columns, eval.target_names);
  return result;
}

Evaluation evaluate(const SequentialModel& model, const EvalSet& eval) {
  return evaluate_predictions(predict(model, eval.features), eval);
}

bool EpochTracker::record(double score) {
  scores_.push_back(score);
  if (scores_.size() == 1 || score > best_) {
    best_ = score;
    return true;
  }
  return false;
}

bool EpochTracker::should_stop() const {
  if (scores_.size() >= max_epochs_) return true;
  if (scores_.empty()) return false;
  return early_stop(scores_, patience_, max_epochs_).stop;
}

std::size_t EpochTracker::best_epoch() const {
  if (scores_.empty()) return 0;
  return early_stop(scores_, patience_, max_epochs_).best_epoch;
}

double sgd_train_step(SequentialModel& model, const Batch& batch, double lr) {
  auto [y_hat, cache] = forward(model, batch.x);
  auto loss = bce_loss(y_hat, batch.y);
  const GradientSet grads = backward(model, cache, loss.grad);
  sgd_update(model, grads.params, lr);
  return loss.loss;
}

SgdResult train_sgd(const SequentialModel& init, const LocalData& data, const EvalSet& eval,
                    const TrainingOptions& options) {
  if (data.size() == 0) throw ProtocolError("cannot train on an empty dataset");
  SgdResult result;
  result.model = init;
  SequentialModel model = init;
  EpochTracker tracker(options.patience, options.max_epochs);
  for (std::size_t epoch = 0; epoch < options.max_epochs; ++epoch) {
    for (const auto& batch : epoch_batch_data(data, options.batch_size, options.seed, epoch)) {
      result.losses.push_back(sgd_train_step(model, batch, options.lr));
    }
    Evaluation eval_result = evaluate(model, eval);
    RoundRecord record;
    record.round = epoch;
    record.epoch = epoch + 1;
    record.participants = {data.client_id};
    record.val_loss = eval_result.loss;
    record.mean_auc = mean_auc(eval_result.report);
    result.history.push_back(record);
    if (tracker.record(eval_result.score())) {
      result.model = model;
      result.best = std::move(eval_result);
    }
    if (tracker.should_stop()) break;
  }
  if (tracker.epochs() == 0) result.best = evaluate(model, eval);
  result.last_model = model;
  result.epochs_run = tracker.epochs();
  result.best_epoch = tracker.best_epoch();
  return result;
}

}  // namespace fedsplit
