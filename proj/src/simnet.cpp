#include "fedsplit/simnet.hpp"

#include <ostream>

#include "fedsplit/error.hpp"

namespace fedsplit {

const char* to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::Activation:
      return "activation";
    case MessageKind::Gradient:
      return "gradient";
    case MessageKind::Weights:
      return "weights";
    case MessageKind::Control:
      return "control";
  }
  return "unknown";
}

std::size_t message_bytes(const std::vector<Shape>& payload_shapes) {
  std::size_t bytes = kHeaderBytes;
  for (const auto& shape : payload_shapes) {
    std::size_t numel = 1;
    for (auto extent : shape) numel *= extent;
    bytes += kLengthPrefixBytes + kElementBytes * numel;
  }
  return bytes;
}

std::size_t message_bytes(const Message& message) {
  std::size_t bytes = kHeaderBytes;
  for (const auto& t : message.payload) bytes += kLengthPrefixBytes + kElementBytes * t.numel();
  return bytes;
}

bool operator==(const LogEntry& a, const LogEntry& b) {
  return a.seq == b.seq && a.kind == b.kind && a.round == b.round && a.from == b.from && a.to == b.to &&
         a.payload_shapes == b.payload_shapes && a.bytes == b.bytes && a.carries_targets == b.carries_targets;
}

const LogEntry& CommLog::append(const Message& message) {
  LogEntry entry;
  entry.seq = entries_.size();
  entry.kind = message.kind;
  entry.round = message.round;
  entry.from = message.from;
  entry.to = message.to;
  for (const auto& t : message.payload) entry.payload_shapes.push_back(t.shape());
  entry.bytes = message_bytes(message);
  entry.carries_targets = message.carries_targets;
  entries_.push_back(std::move(entry));
  return entries_.back();
}

std::size_t CommLog::total_bytes() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += e.bytes;
  return total;
}

void CommLog::write_csv(std::ostream& out) const {
  out << "seq,round,kind,from,to,bytes,carries_targets\n";
  for (const auto& e : entries_) {
    out << e.seq << ',' << e.round << ',' << to_string(e.kind) << ',' << e.from << ',' << e.to << ',' << e.bytes << ','
        << (e.carries_targets ? "true" : "false") << '\n';
  }
}

Receipt send(CommLog& log, const Message& message) {
  const LogEntry& entry = log.append(message);
  return Receipt{entry.seq, entry.bytes};
}

Receipt Network::send(Message message) {
  if (forbid_targets_to_server_ && message.to == kServerEndpoint && message.carries_targets) {
    throw PrivacyError("refusing to send targets from endpoint " + std::to_string(message.from) + " to the server");
  }
  const Receipt receipt = fedsplit::send(log_, message);
  queues_[{message.from, message.to}].push_back(std::move(message));
  return receipt;
}

Message Network::receive(EndpointId from, EndpointId to) {
  auto it = queues_.find({from, to});
  if (it == queues_.end() || it->second.empty()) {
    throw ProtocolError("no pending message from endpoint " + std::to_string(from) + " to " + std::to_string(to));
  }
  Message message = std::move(it->second.front());
  it->second.pop_front();
  return message;
}

std::size_t Network::pending() const {
  std::size_t n = 0;
  for (const auto& [key, queue] : queues_) n += queue.size();
  return n;
}

CommSummary comm_summary(const CommLog& log, const std::string& run) {
  CommSummary summary;
  std::map<std::pair<std::uint64_t, Direction>, CommTotals> groups;
  for (const auto& e : log.entries()) {
    const Direction dir = e.to == kServerEndpoint ? Direction::Uplink : Direction::Downlink;
    auto& g = groups[{e.round, dir}];
    ++g.messages;
    g.bytes += e.bytes;
    auto& k = summary.by_kind[e.kind];
    ++k.messages;
    k.bytes += e.bytes;
    ++summary.total.messages;
    summary.total.bytes += e.bytes;
  }
  for (const auto& [key, totals] : groups) summary.rows.push_back(CommSummaryRow{run, key.first, key.second, totals});
  return summary;
}

}  // namespace fedsplit
