#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedsplit/dataio.hpp"
#include "fedsplit/metrics.hpp"
#include "fedsplit/nn.hpp"

namespace fedsplit {

struct Batch {
  Tensor x;
  Tensor y;

  std::size_t size() const { return x.rows(); }
};

// A client's training data as tensors: features [n, d] and smoothed targets
// [n, 14].
struct LocalData {
  std::size_t client_id = 0;
  std::string name;
  Tensor features;
  Tensor targets;

  std::size_t size() const { return features.empty() ? 0 : features.rows(); }
};

// Applies the label policy with one RNG stream per sample id, so a sample's
// smoothed target does not depend on which client holds it.
LocalData materialize(std::span<const Sample> samples, std::size_t client_id, std::string name,
                      const LabelPolicy& policy, std::uint64_t seed);
LocalData materialize(const ClientDataset& client, const LabelPolicy& policy, std::uint64_t seed);

// Row indices of each batch of one epoch. The order depends only on
// (seed, stream, epoch), so the same client sees the same batches whatever
// protocol drives it.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t stream, std::size_t epoch);

Batch gather(const LocalData& data, std::span<const std::size_t> rows);
std::vector<Batch> epoch_batch_data(const LocalData& data, std::size_t batch_size, std::uint64_t seed,
                                    std::size_t epoch);

// Validation features and binary truths for all 14 labels.
struct EvalSet {
  Tensor features;
  Tensor truths;
  std::vector<std::size_t> target_columns;
  std::vector<std::string> target_names;
};

EvalSet make_eval_set(const Dataset& val);

struct Evaluation {
  double loss = 0.0;
  MetricsReport report;

  // Mean AUC, or -inf when some target label is undefined (so it never wins
  // a best-epoch comparison).
  double score() const;
};

Evaluation evaluate_predictions(const Tensor& predictions, const EvalSet& eval);
Evaluation evaluate(const SequentialModel& model, const EvalSet& eval);

struct RoundRecord {
  std::size_t round = 0;
  std::size_t epoch = 0;  // 1-based
  std::vector<std::size_t> participants;
  double val_loss = 0.0;
  std::optional<double> mean_auc;
  std::size_t messages = 0;
  std::size_t bytes = 0;
};

// Tracks epoch-level validation scores for early stopping.
class EpochTracker {
 public:
  EpochTracker(std::size_t patience, std::size_t max_epochs) : patience_(patience), max_epochs_(max_epochs) {}

  // Returns true when this epoch is the new best.
  bool record(double score);
  bool should_stop() const;
  std::size_t best_epoch() const;
  std::size_t epochs() const { return scores_.size(); }

 private:
  std::size_t patience_;
  std::size_t max_epochs_;
  std::vector<double> scores_;
  double best_ = 0.0;
};

struct TrainingOptions {
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::size_t max_epochs = 10;
  std::size_t patience = 4;
  std::uint64_t seed = 1;
};

struct SgdResult {
  SequentialModel model;  // best-epoch checkpoint
  SequentialModel last_model;
  std::vector<RoundRecord> history;
  std::vector<double> losses;  // training loss per step
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  Evaluation best;
};

// Plain mini-batch SGD on one party's data: the centralized and local
// baselines.
SgdResult train_sgd(const SequentialModel& init, const LocalData& data, const EvalSet& eval,
                    const TrainingOptions& options);

// One monolithic SGD step; returns the loss.
double sgd_train_step(SequentialModel& model, const Batch& batch, double lr);

}  // namespace fedsplit
