#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fedsplit/fedlearn.hpp"
#include "fedsplit/nn.hpp"
#include "fedsplit/simnet.hpp"
#include "fedsplit/training.hpp"

namespace fedsplit {

enum class Layout { Vanilla, UShaped };

const char* to_string(Layout layout);

struct SplitConfig {
  Layout layout = Layout::Vanilla;
  std::size_t cut_m = 1;
  std::optional<std::size_t> cut_n;  // U-shaped only
  Granularity granularity = Granularity::Fine;
  std::vector<std::size_t> client_order;  // empty means 0..K-1
  double client_lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 10;
  std::size_t patience = 4;
  std::uint64_t seed = 1;

  void validate(std::size_t num_clients) const;
};

// One shared server segment, and per-client front (and back) segments that
// never leave their client.
struct SplitState {
  Layout layout = Layout::Vanilla;
  SequentialModel server;
  std::vector<SequentialModel> fronts;
  std::vector<SequentialModel> backs;  // U-shaped only

  SplitState() = default;
  SplitState(const SequentialModel& init, Layout layout, std::size_t cut_m, std::optional<std::size_t> cut_n,
             std::size_t num_clients);

  std::size_t num_clients() const { return fronts.size(); }
  // front -> server -> back, as one model.
  SequentialModel client_model(std::size_t client) const;
};

// One vanilla training step: activations plus targets go up, the cut-layer
// gradient comes back. Server and client segments are both updated with
// `lr`. Returns the batch loss.
double vanilla_step(SplitState& state, Network& net, std::size_t client, const Batch& batch, double lr,
                    std::uint64_t round);

// One U-shaped step: the loss is computed on the client, and no server-bound
// message carries targets.
double ushaped_step(SplitState& state, Network& net, std::size_t client, const Batch& batch, double lr,
                    std::uint64_t round);

// Mean over clients of each client's full-path prediction.
Tensor ensemble_predict(const std::vector<SequentialModel>& fronts, const SequentialModel& server,
                        const std::vector<SequentialModel>& backs, const Tensor& x);
Tensor ensemble_predict(const SplitState& state, const Tensor& x);

struct SplitTurn {
  std::size_t epoch = 0;
  std::size_t client = 0;
  std::size_t batches = 0;
};

struct SplitResult {
  SplitState state;  // best-epoch checkpoint
  SplitState last_state;
  std::vector<RoundRecord> history;  // one record per epoch
  std::vector<SplitTurn> turns;
  std::vector<double> losses;
  CommLog comm;
  Evaluation best;                     // ensemble
  std::vector<Evaluation> client_best; // each client model at the best epoch
  std::size_t best_epoch = 0;
  std::size_t epochs_run = 0;
};

SplitResult run_split(const SplitConfig& config, const std::vector<LocalData>& clients, const SequentialModel& init,
                      const EvalSet& eval);

}  // namespace fedsplit
