#pragma once

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fedsplit/tensor.hpp"

namespace fedsplit {

enum class MessageKind { Activation, Gradient, Weights, Control };

const char* to_string(MessageKind kind);

using EndpointId = std::uint32_t;
inline constexpr EndpointId kServerEndpoint = 0;

// Client index c talks on endpoint c + 1.
constexpr EndpointId client_endpoint(std::size_t client_index) { return static_cast<EndpointId>(client_index + 1); }

struct Message {
  MessageKind kind = MessageKind::Control;
  std::uint64_t round = 0;
  EndpointId from = 0;
  EndpointId to = 0;
  std::vector<Tensor> payload;
  bool carries_targets = false;
};

inline constexpr std::size_t kHeaderBytes = 24;
inline constexpr std::size_t kLengthPrefixBytes = 8;
inline constexpr std::size_t kElementBytes = 8;

// 24-byte header plus, per payload tensor, an 8-byte length prefix and 8
// bytes per element.
std::size_t message_bytes(const std::vector<Shape>& payload_shapes);
std::size_t message_bytes(const Message& message);

struct LogEntry {
  std::uint64_t seq = 0;
  MessageKind kind = MessageKind::Control;
  std::uint64_t round = 0;
  EndpointId from = 0;
  EndpointId to = 0;
  std::vector<Shape> payload_shapes;
  std::size_t bytes = 0;
  bool carries_targets = false;
};

bool operator==(const LogEntry& a, const LogEntry& b);

class CommLog {
 public:
  const LogEntry& append(const Message& message);

  const std::vector<LogEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t total_bytes() const;

  // seq,round,kind,from,to,bytes,carries_targets
  void write_csv(std::ostream& out) const;

  bool operator==(const CommLog& other) const { return entries_ == other.entries_; }

 private:
  std::vector<LogEntry> entries_;
};

struct Receipt {
  std::uint64_t seq = 0;
  std::size_t bytes = 0;
};

// Records the message and returns its receipt. Transport never fails.
Receipt send(CommLog& log, const Message& message);

// Immediate, lossless, FIFO-per-endpoint-pair delivery on top of a CommLog.
// With `forbid_targets_to_server`, any server-bound message flagged as
// carrying targets is rejected with PrivacyError before it is logged.
class Network {
 public:
  explicit Network(bool forbid_targets_to_server = false) : forbid_targets_to_server_(forbid_targets_to_server) {}

  Receipt send(Message message);

  // Oldest pending message from `from` to `to`; ProtocolError if none.
  Message receive(EndpointId from, EndpointId to);

  std::size_t pending() const;
  const CommLog& log() const { return log_; }

 private:
  bool forbid_targets_to_server_;
  CommLog log_;
  std::map<std::pair<EndpointId, EndpointId>, std::deque<Message>> queues_;
};

enum class Direction { Uplink, Downlink };  // uplink: towards the server

struct CommTotals {
  std::size_t messages = 0;
  std::size_t bytes = 0;
};

struct CommSummaryRow {
  std::string run;
  std::uint64_t round = 0;
  Direction direction = Direction::Uplink;
  CommTotals totals;
};

struct CommSummary {
  std::vector<CommSummaryRow> rows;  // ordered by (round, direction)
  CommTotals total;
  std::map<MessageKind, CommTotals> by_kind;
};

CommSummary comm_summary(const CommLog& log, const std::string& run = "");

}  // namespace fedsplit
