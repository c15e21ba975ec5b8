#include "fedsplit/fedlearn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedsplit/error.hpp"

namespace fedsplit {

namespace {

constexpr std::uint64_t kSelectionStream = 0x73656c6563740000ULL;

void check_payload_kinds(const std::vector<ClientUpdate>& updates, PayloadKind expected, const char* who) {
  if (updates.empty()) throw ProtocolError(std::string(who) + ": no client updates to aggregate");
  for (const auto& u : updates) {
    if (u.kind != expected) throw ProtocolError(std::string(who) + ": mixed or wrong payload kinds");
  }
}

// Sorted by client id, with n = sum n_k.
std::size_t canonical_order(std::vector<ClientUpdate>& updates) {
  std::sort(updates.begin(), updates.end(),
            [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
  std::size_t n = 0;
  for (const auto& u : updates) n += u.sample_count;
  if (n == 0) throw ProtocolError("client updates cover zero samples");
  return n;
}

ParameterSet zeros_like(const ParameterSet& params) {
  ParameterSet out;
  for (const auto& p : params) out.emplace_back(p.shape());
  return out;
}

void check_shapes(const ParameterSet& reference, const ParameterSet& payload) {
  if (reference.size() != payload.size()) throw DimensionError("client payload does not match the global model");
  for (std::size_t i = 0; i < reference.size(); ++i) require_same_shape(reference[i], payload[i], "client payload");
}

Message encode_update(const ClientUpdate& update, std::uint64_t round) {
  Message msg;
  msg.kind = update.kind == PayloadKind::Gradients ? MessageKind::Gradient : MessageKind::Weights;
  msg.round = round;
  msg.from = client_endpoint(update.client_id);
  msg.to = kServerEndpoint;
  msg.payload = update.payload;
  msg.payload.push_back(Tensor({1}, {static_cast<double>(update.sample_count)}));
  return msg;
}

ClientUpdate decode_update(Message msg, std::size_t client_id) {
  if (msg.payload.empty()) throw ProtocolError("client update without a sample count");
  ClientUpdate update;
  update.client_id = client_id;
  update.kind = msg.kind == MessageKind::Gradient ? PayloadKind::Gradients : PayloadKind::Weights;
  update.sample_count = static_cast<std::size_t>(msg.payload.back()[0]);
  msg.payload.pop_back();
  update.payload = std::move(msg.payload);
  return update;
}

}  // namespace

const char* to_string(Aggregation aggregation) {
  return aggregation == Aggregation::FedSGD ? "fedsgd" : "fedavg";
}

const char* to_string(Granularity granularity) { return granularity == Granularity::Fine ? "fine" : "coarse"; }

void FedConfig::validate() const {
  if (num_clients == 0) throw ConfigError("federated runs need at least one client");
  if (!(client_fraction > 0.0 && client_fraction <= 1.0)) throw ConfigError("client fraction C must lie in (0, 1]");
  if (!(client_lr > 0.0) || !(server_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
}

Aggregation FedConfig::effective_aggregation() const {
  return granularity == Granularity::Coarse ? Aggregation::FedAVG : aggregation;
}

std::vector<std::size_t> select_clients(std::span<const std::size_t> client_ids, double fraction, Rng& rng) {
  if (client_ids.empty()) throw ConfigError("select_clients needs at least one client");
  const auto k = static_cast<double>(client_ids.size());
  const auto m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * k)));
  std::vector<std::size_t> ids(client_ids.begin(), client_ids.end());
  if (m < ids.size()) {
    // Partial Fisher-Yates: the first m slots are the sample.
    for (std::size_t i = 0; i < m; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(ids.size() - i));
      std::swap(ids[i], ids[j]);
    }
    ids.resize(m);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

ClientUpdate client_compute(const SequentialModel& global, std::size_t client_id, std::span<const Batch> unit,
                            double client_lr, Aggregation aggregation) {
  if (unit.empty()) throw ProtocolError("client " + std::to_string(client_id) + " has an empty data unit");
  ClientUpdate update;
  update.client_id = client_id;
  for (const auto& b : unit) update.sample_count += b.size();

  if (aggregation == Aggregation::FedSGD) {
    update.kind = PayloadKind::Gradients;
    if (unit.size() == 1) {
      auto [y_hat, cache] = forward(global, unit[0].x);
      update.payload = backward(global, cache, bce_loss(y_hat, unit[0].y).grad).params;
      return update;
    }
    update.payload = zeros_like(global.parameters());
    const auto n = static_cast<double>(update.sample_count);
    for (const auto& b : unit) {
      auto [y_hat, cache] = forward(global, b.x);
      const auto grads = backward(global, cache, bce_loss(y_hat, b.y).grad).params;
      const double weight = static_cast<double>(b.size()) / n;
      for (std::size_t i = 0; i < grads.size(); ++i) {
        for (std::size_t j = 0; j < grads[i].numel(); ++j) update.payload[i][j] += weight * grads[i][j];
      }
    }
    return update;
  }

  update.kind = PayloadKind::Weights;
  SequentialModel local = global;
  for (const auto& b : unit) sgd_train_step(local, b, client_lr);
  update.payload = local.parameters();
  return update;
}

SequentialModel aggregate_fedsgd(const SequentialModel& global, std::vector<ClientUpdate> updates, double lr) {
  check_payload_kinds(updates, PayloadKind::Gradients, "aggregate_fedsgd");
  const auto n = static_cast<double>(canonical_order(updates));
  const ParameterSet reference = global.parameters();
  ParameterSet sum = zeros_like(reference);
  for (const auto& u : updates) {
    check_shapes(reference, u.payload);
    const double weight = static_cast<double>(u.sample_count) / n;
    for (std::size_t i = 0; i < sum.size(); ++i) {
      for (std::size_t j = 0; j < sum[i].numel(); ++j) sum[i][j] += weight * u.payload[i][j];
    }
  }
  SequentialModel next = global;
  sgd_update(next, sum, lr);
  return next;
}

SequentialModel aggregate_fedavg(const SequentialModel& global, std::vector<ClientUpdate> updates,
                                 double server_lr) {
  check_payload_kinds(updates, PayloadKind::Weights, "aggregate_fedavg");
  const auto n = static_cast<double>(canonical_order(updates));
  const ParameterSet reference = global.parameters();
  // Averaged as deltas from w so that unchanged clients leave w bit-exact.
  ParameterSet delta = zeros_like(reference);
  for (const auto& u : updates) {
    check_shapes(reference, u.payload);
    const double weight = static_cast<double>(u.sample_count) / n;
    for (std::size_t i = 0; i < delta.size(); ++i) {
      for (std::size_t j = 0; j < delta[i].numel(); ++j) delta[i][j] += weight * (u.payload[i][j] - reference[i][j]);
    }
  }
  ParameterSet next_params = reference;
  for (std::size_t i = 0; i < next_params.size(); ++i) {
    for (std::size_t j = 0; j < next_params[i].numel(); ++j) next_params[i][j] += server_lr * delta[i][j];
    next_params[i].require_finite("aggregate_fedavg result");
  }
  SequentialModel next = global;
  next.set_parameters(next_params);
  return next;
}

FedResult run_federated(const FedConfig& config, const std::vector<LocalData>& clients, const SequentialModel& init,
                        const EvalSet& eval) {
  config.validate();
  if (clients.size() != config.num_clients) {
    throw ConfigError("partition has " + std::to_string(clients.size()) + " clients, config expects " +
                      std::to_string(config.num_clients));
  }
  for (std::size_t c = 0; c < clients.size(); ++c) {
    if (clients[c].client_id != c) throw ConfigError("client ids must be 0..K-1 in order");
  }

  Network net;
  FedResult result;
  result.aggregation = config.effective_aggregation();
  result.model = init;
  SequentialModel global = init;
  EpochTracker tracker(config.patience, config.max_epochs);
  Rng selection_rng(mix_seed(config.seed, kSelectionStream));
  std::vector<std::size_t> ids(clients.size());
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::uint64_t round = 0;

  auto run_round = [&](const std::vector<std::size_t>& participants,
                       const std::vector<std::vector<Batch>>& units, std::size_t epoch) {
    const std::size_t log_start = net.log().size();
    // Selection: broadcast the global model.
    const ParameterSet global_params = global.parameters();
    for (std::size_t c : participants) {
      net.send(Message{MessageKind::Weights, round, kServerEndpoint, client_endpoint(c), global_params, false});
    }
    // Update and reporting.
    for (std::size_t i = 0; i < participants.size(); ++i) {
      const std::size_t c = participants[i];
      Message download = net.receive(kServerEndpoint, client_endpoint(c));
      SequentialModel local = global;
      local.set_parameters(download.payload);
      const ClientUpdate update = client_compute(local, c, units[i], config.client_lr, result.aggregation);
      net.send(encode_update(update, round));
    }
    // Aggregation.
    std::vector<ClientUpdate> updates;
    for (std::size_t c : participants) updates.push_back(decode_update(net.receive(client_endpoint(c), kServerEndpoint), c));
    global = result.aggregation == Aggregation::FedSGD
                 ? aggregate_fedsgd(global, std::move(updates), config.server_lr * config.client_lr)
                 : aggregate_fedavg(global, std::move(updates), config.server_lr);

    Evaluation eval_result = evaluate(global, eval);
    RoundRecord record;
    record.round = round;
    record.epoch = epoch + 1;
    record.participants = participants;
    record.val_loss = eval_result.loss;
    record.mean_auc = mean_auc(eval_result.report);
    for (std::size_t e = log_start; e < net.log().size(); ++e) {
      ++record.messages;
      record.bytes += net.log().entries()[e].bytes;
    }
    result.history.push_back(std::move(record));
    ++round;
    return eval_result;
  };

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::vector<std::vector<Batch>> batches;
    for (const auto& client : clients) batches.push_back(epoch_batch_data(client, config.batch_size, config.seed, epoch));

    std::optional<Evaluation> epoch_eval;
    if (config.granularity == Granularity::Fine) {
      std::size_t rounds = 0;
      for (const auto& b : batches) rounds = std::max(rounds, b.size());
      std::vector<std::size_t> cursor(clients.size(), 0);
      for (std::size_t r = 0; r < rounds; ++r) {
        std::vector<std::size_t> participants;
        std::vector<std::vector<Batch>> units;
        for (std::size_t c : select_clients(ids, config.client_fraction, selection_rng)) {
          if (cursor[c] >= batches[c].size()) continue;
          participants.push_back(c);
          units.push_back({batches[c][cursor[c]++]});
        }
        if (participants.empty()) continue;
        epoch_eval = with_context("round " + std::to_string(round), [&] { return run_round(participants, units, epoch); });
      }
    } else {
      std::vector<std::size_t> participants;
      std::vector<std::vector<Batch>> units;
      for (std::size_t c : select_clients(ids, config.client_fraction, selection_rng)) {
        if (batches[c].empty()) continue;
        participants.push_back(c);
        units.push_back(std::move(batches[c]));
      }
      if (!participants.empty()) {
        epoch_eval = with_context("round " + std::to_string(round), [&] { return run_round(participants, units, epoch); });
      }
    }

    if (!epoch_eval) epoch_eval = evaluate(global, eval);
    if (tracker.record(epoch_eval->score())) {
      result.model = global;
      result.best = std::move(*epoch_eval);
    }
    if (tracker.should_stop()) break;
  }

  if (tracker.epochs() == 0) result.best = evaluate(global, eval);
  result.last_model = global;
  result.epochs_run = tracker.epochs();
  result.best_epoch = tracker.best_epoch();
  result.comm = net.log();
  return result;
}

}  // namespace fedsplit
