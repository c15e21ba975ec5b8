#include "fedsplit/splitlearn.hpp"

#include <algorithm>
#include <numeric>

#include "fedsplit/error.hpp"

namespace fedsplit {

namespace {

void check_client(const SplitState& state, std::size_t client) {
  if (client >= state.num_clients()) {
    throw ProtocolError("unknown split client " + std::to_string(client));
  }
}

const Tensor& payload_at(const Message& msg, std::size_t index) {
  if (msg.payload.size() <= index) throw ProtocolError("message is missing payload tensor " + std::to_string(index));
  return msg.payload[index];
}

}  // namespace

const char* to_string(Layout layout) { return layout == Layout::Vanilla ? "vanilla" : "ushaped"; }

void SplitConfig::validate(std::size_t num_clients) const {
  if (num_clients == 0) throw ConfigError("split runs need at least one client");
  if (layout == Layout::UShaped && !cut_n) throw ConfigError("the U-shaped layout needs a second cut (cut_n)");
  if (layout == Layout::Vanilla && cut_n) throw ConfigError("the vanilla layout takes a single cut");
  if (!(client_lr > 0.0)) throw ConfigError("client_lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  if (!client_order.empty()) {
    std::vector<std::size_t> sorted = client_order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      if (sorted.size() != num_clients || sorted[i] != i) {
        throw ConfigError("client_order must be a permutation of the client ids");
      }
    }
  }
}

SplitState::SplitState(const SequentialModel& init, Layout layout_, std::size_t cut_m,
                       std::optional<std::size_t> cut_n, std::size_t num_clients)
    : layout(layout_) {
  if (layout == Layout::UShaped && !cut_n) throw ConfigError("the U-shaped layout needs a second cut (cut_n)");
  if (layout == Layout::Vanilla && cut_n) throw ConfigError("the vanilla layout takes a single cut");
  ModelPartition partition = split_model(init, cut_m, cut_n);
  server = std::move(partition.server);
  fronts.assign(num_clients, partition.front);
  if (partition.back) backs.assign(num_clients, *partition.back);
}

SequentialModel SplitState::client_model(std::size_t client) const {
  check_client(*this, client);
  std::vector<SequentialModel> segments{fronts[client], server};
  if (layout == Layout::UShaped) segments.push_back(backs[client]);
  return concat(segments);
}

double vanilla_step(SplitState& state, Network& net, std::size_t client, const Batch& batch, double lr,
                    std::uint64_t round) {
  if (state.layout != Layout::Vanilla) throw ProtocolError("vanilla_step called on a U-shaped state");
  check_client(state, client);
  const EndpointId endpoint = client_endpoint(client);

  // Client: front segment up to the cut layer.
  auto [cut_activation, front_cache] = forward(state.fronts[client], batch.x);
  net.send(Message{MessageKind::Activation, round, endpoint, kServerEndpoint, {std::move(cut_activation), batch.y}, true});

  // Server: rest of the network, loss, and backward down to the cut.
  const Message up = net.receive(endpoint, kServerEndpoint);
  auto [y_hat, server_cache] = forward(state.server, payload_at(up, 0));
  const LossResult loss = bce_loss(y_hat, payload_at(up, 1));
  GradientSet server_grads = backward(state.server, server_cache, loss.grad);
  sgd_update(state.server, server_grads.params, lr);
  net.send(Message{MessageKind::Gradient, round, kServerEndpoint, endpoint, {std::move(server_grads.input)}, false});

  // Client: finish backpropagation through the front segment.
  const Message down = net.receive(kServerEndpoint, endpoint);
  const GradientSet front_grads = backward(state.fronts[client], front_cache, payload_at(down, 0));
  sgd_update(state.fronts[client], front_grads.params, lr);
  return loss.loss;
}

double ushaped_step(SplitState& state, Network& net, std::size_t client, const Batch& batch, double lr,
                    std::uint64_t round) {
  if (state.layout != Layout::UShaped) throw ProtocolError("ushaped_step called on a vanilla state");
  check_client(state, client);
  const EndpointId endpoint = client_endpoint(client);

  auto [cut_m_activation, front_cache] = forward(state.fronts[client], batch.x);
  net.send(Message{MessageKind::Activation, round, endpoint, kServerEndpoint, {std::move(cut_m_activation)}, false});

  const Message up = net.receive(endpoint, kServerEndpoint);
  auto [cut_n_activation, server_cache] = forward(state.server, payload_at(up, 0));
  net.send(Message{MessageKind::Activation, round, kServerEndpoint, endpoint, {std::move(cut_n_activation)}, false});

  // Client: head, loss, and backward to the second cut. Labels stay here.
  const Message down = net.receive(kServerEndpoint, endpoint);
  auto [y_hat, back_cache] = forward(state.backs[client], payload_at(down, 0));
  const LossResult loss = bce_loss(y_hat, batch.y);
  GradientSet back_grads = backward(state.backs[client], back_cache, loss.grad);
  sgd_update(state.backs[client], back_grads.params, lr);
  net.send(Message{MessageKind::Gradient, round, endpoint, kServerEndpoint, {std::move(back_grads.input)}, false});

  const Message grad_up = net.receive(endpoint, kServerEndpoint);
  GradientSet server_grads = backward(state.server, server_cache, payload_at(grad_up, 0));
  sgd_update(state.server, server_grads.params, lr);
  net.send(Message{MessageKind::Gradient, round, kServerEndpoint, endpoint, {std::move(server_grads.input)}, false});

  const Message grad_down = net.receive(kServerEndpoint, endpoint);
  const GradientSet front_grads = backward(state.fronts[client], front_cache, payload_at(grad_down, 0));
  sgd_update(state.fronts[client], front_grads.params, lr);
  return loss.loss;
}

Tensor ensemble_predict(const std::vector<SequentialModel>& fronts, const SequentialModel& server,
                        const std::vector<SequentialModel>& backs, const Tensor& x) {
  if (fronts.empty()) throw ConfigError("ensemble_predict needs at least one client model");
  if (!backs.empty() && backs.size() != fronts.size()) throw ConfigError("one back segment per client required");
  Tensor sum;
  for (std::size_t c = 0; c < fronts.size(); ++c) {
    Tensor y = predict(server, predict(fronts[c], x));
    if (!backs.empty()) y = predict(backs[c], y);
    if (c == 0) {
      sum = std::move(y);
    } else {
      require_same_shape(sum, y, "ensemble_predict");
      for (std::size_t i = 0; i < sum.numel(); ++i) sum[i] += y[i];
    }
  }
  if (fronts.size() > 1) {
    const auto k = static_cast<double>(fronts.size());
    for (auto& v : sum.data()) v /= k;
  }
  return sum;
}

Tensor ensemble_predict(const SplitState& state, const Tensor& x) {
  return ensemble_predict(state.fronts, state.server, state.backs, x);
}

SplitResult run_split(const SplitConfig& config, const std::vector<LocalData>& clients, const SequentialModel& init,
                      const EvalSet& eval) {
  config.validate(clients.size());
  for (std::size_t c = 0; c < clients.size(); ++c) {
    if (clients[c].client_id != c) throw ConfigError("client ids must be 0..K-1 in order");
  }
  std::vector<std::size_t> order = config.client_order;
  if (order.empty()) {
    order.resize(clients.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
  }

  SplitResult result;
  SplitState state(init, config.layout, config.cut_m, config.cut_n, clients.size());
  result.state = state;
  Network net(config.layout == Layout::UShaped);
  EpochTracker tracker(config.patience, config.max_epochs);
  const auto step = config.layout == Layout::Vanilla ? vanilla_step : ushaped_step;

  auto evaluate_all = [&](const SplitState& s) {
    std::vector<Evaluation> per_client;
    for (std::size_t c = 0; c < s.num_clients(); ++c) per_client.push_back(evaluate(s.client_model(c), eval));
    return per_client;
  };

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::size_t log_start = net.log().size();
    std::vector<std::vector<Batch>> batches;
    for (const auto& client : clients) batches.push_back(epoch_batch_data(client, config.batch_size, config.seed, epoch));
    std::vector<std::size_t> cursor(clients.size(), 0);

    auto take_turn = [&](std::size_t c, std::size_t n_batches) {
      // The server hands the turn to client c.
      net.send(Message{MessageKind::Control, epoch, kServerEndpoint, client_endpoint(c), {}, false});
      (void)net.receive(kServerEndpoint, client_endpoint(c));
      for (std::size_t b = 0; b < n_batches; ++b) {
        const Batch& batch = batches[c][cursor[c]++];
        result.losses.push_back(with_context("epoch " + std::to_string(epoch + 1) + ", client " + std::to_string(c),
                                             [&] { return step(state, net, c, batch, config.client_lr, epoch); }));
      }
      result.turns.push_back(SplitTurn{epoch, c, n_batches});
    };

    if (config.granularity == Granularity::Fine) {
      bool progressed = true;
      while (progressed) {
        progressed = false;
        for (std::size_t c : order) {
          if (cursor[c] >= batches[c].size()) continue;
          take_turn(c, 1);
          progressed = true;
        }
      }
    } else {
      for (std::size_t c : order) {
        if (!batches[c].empty()) take_turn(c, batches[c].size());
      }
    }

    Evaluation eval_result = evaluate_predictions(ensemble_predict(state, eval.features), eval);
    RoundRecord record;
    record.round = epoch;
    record.epoch = epoch + 1;
    record.participants = order;
    record.val_loss = eval_result.loss;
    record.mean_auc = mean_auc(eval_result.report);
    for (std::size_t e = log_start; e < net.log().size(); ++e) {
      ++record.messages;
      record.bytes += net.log().entries()[e].bytes;
    }
    result.history.push_back(std::move(record));
    if (tracker.record(eval_result.score())) {
      result.state = state;
      result.best = std::move(eval_result);
      result.client_best = evaluate_all(state);
    }
    if (tracker.should_stop()) break;
  }

  if (tracker.epochs() == 0) {
    result.best = evaluate_predictions(ensemble_predict(state, eval.features), eval);
    result.client_best = evaluate_all(state);
  }
  result.last_state = state;
  result.epochs_run = tracker.epochs();
  result.best_epoch = tracker.best_epoch();
  result.comm = net.log();
  return result;
}

}  // namespace fedsplit
