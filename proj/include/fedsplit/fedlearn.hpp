#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedsplit/nn.hpp"
#include "fedsplit/random.hpp"
#include "fedsplit/simnet.hpp"
#include "fedsplit/training.hpp"

namespace fedsplit {

enum class Aggregation { FedSGD, FedAVG };
enum class Granularity { Fine, Coarse };

const char* to_string(Aggregation aggregation);
const char* to_string(Granularity granularity);

struct FedConfig {
  std::size_t num_clients = 5;
  double client_fraction = 1.0;  // C
  double client_lr = 1e-3;
  double server_lr = 1.0;
  Aggregation aggregation = Aggregation::FedSGD;
  Granularity granularity = Granularity::Fine;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 4;
  std::uint64_t seed = 1;

  void validate() const;
  // Coarse rounds always aggregate weights after a full local pass.
  Aggregation effective_aggregation() const;
};

enum class PayloadKind { Gradients, Weights };

struct ClientUpdate {
  std::size_t client_id = 0;
  PayloadKind kind = PayloadKind::Gradients;
  ParameterSet payload;
  std::size_t sample_count = 0;  // n_k
};

// max(1, round(C * K)) ids sampled without replacement, returned in
// ascending order. C == 1 returns every id without touching the rng.
std::vector<std::size_t> select_clients(std::span<const std::size_t> client_ids, double fraction, Rng& rng);

// FedSGD: the average gradient over the whole unit at the global weights.
// FedAVG: the weights after one SGD pass over the unit's batches.
ClientUpdate client_compute(const SequentialModel& global, std::size_t client_id, std::span<const Batch> unit,
                            double client_lr, Aggregation aggregation);

// w <- w - lr * sum_k (n_k / n) g_k, reduced in ascending client id order.
SequentialModel aggregate_fedsgd(const SequentialModel& global, std::vector<ClientUpdate> updates, double lr);

// w <- w + server_lr * (sum_k (n_k / n) w_k - w), same reduction order.
SequentialModel aggregate_fedavg(const SequentialModel& global, std::vector<ClientUpdate> updates,
                                 double server_lr);

struct FedResult {
  SequentialModel model;  // best-epoch checkpoint
  SequentialModel last_model;
  std::vector<RoundRecord> history;  // one record per aggregation round
  CommLog comm;
  Evaluation best;
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
  Aggregation aggregation = Aggregation::FedSGD;
};

FedResult run_federated(const FedConfig& config, const std::vector<LocalData>& clients, const SequentialModel& init,
                        const EvalSet& eval);

}  // namespace fedsplit
