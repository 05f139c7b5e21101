#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <vector>

#include "p4net/errors.hpp"
#include "p4net/numerics.hpp"

namespace p4net {

enum class MessageKind : std::uint8_t {
  kProbeRequest = 0,
  kProbeWeights = 1,
  kGradientShare = 2,
  kModelBroadcast = 3,
  kGroupUpdate = 4,
};

/// One simulated P2P datagram. Payload tensors are row-major f64 matrices;
/// flattened vectors travel as 1 x n.
struct Message {
  MessageKind kind = MessageKind::kProbeRequest;
  std::uint32_t sender = 0;
  std::uint32_t receiver = 0;
  std::uint32_t round = 0;
  std::vector<DenseMatrix> payload;
};

inline constexpr std::uint16_t kWireVersion = 1;

/// Binary layout, all little-endian: magic "P4NT", version u16, kind u8,
/// sender u32, receiver u32, round u32, payload count u32, then per tensor
/// rows u32, cols u32 and rows*cols f64 values.
std::vector<std::uint8_t> serialize(const Message& msg);

/// Inverse of serialize. Truncation, bad magic, unknown version or kind and
/// trailing garbage all raise ParseError naming the offending field.
Message deserialize(const std::vector<std::uint8_t>& bytes);

/// In-process transport. Messages cross as serialized bytes, FIFO per
/// receiver, optionally dropped with a fixed probability. Deterministic for
/// a fixed seed and send order.
class Bus {
 public:
  Bus() = default;
  Bus(double drop_probability, RandomSource rng);

  /// Serialize and enqueue (or drop). Rejects a round number lower than the
  /// sender's previous one.
  void send(const Message& msg);
  /// All queued messages for one receiver, in arrival order.
  std::vector<Message> drain(std::uint32_t receiver);

  std::size_t sent_count() const { return sent_; }
  std::size_t dropped_count() const { return dropped_; }
  std::size_t delivered_count() const { return delivered_; }

  /// Observer invoked on every send attempt, after the drop decision.
  void set_tap(std::function<void(const Message&, bool dropped)> tap) {
    tap_ = std::move(tap);
  }

 private:
  std::map<std::uint32_t, std::deque<std::vector<std::uint8_t>>> queues_;
  std::map<std::uint32_t, std::uint32_t> last_round_;
  double drop_probability_ = 0.0;
  RandomSource rng_;
  std::size_t sent_ = 0;
  std::size_t dropped_ = 0;
  std::size_t delivered_ = 0;
  std::function<void(const Message&, bool dropped)> tap_;
};

/// Round-robin aggregator: members sorted by id, slot floor(round/period)
/// mod group size.
std::uint32_t elect_aggregator(const std::vector<std::uint32_t>& members,
                               std::uint32_t round, std::size_t rotation_period);

/// Coordinate-wise mean of parameter sets with identical shapes.
std::vector<DenseMatrix> aggregate_proxy(const std::vector<std::vector<DenseMatrix>>& updates);
/// Same, for flattened parameter vectors.
DenseVector aggregate_proxy(const std::vector<DenseVector>& updates);

struct RoundOutcome {
  std::uint32_t aggregator = 0;
  std::vector<std::uint32_t> participants;  // members that supplied an update
  std::size_t messages = 0;                 // send attempts this round
};

/// One co-training exchange for one group. Every participant's freshly
/// trained proxy (from update_of) is shipped to the elected aggregator,
/// averaged and broadcast back; adopt installs the mean. A member whose
/// update_of returns nullopt (spent privacy budget) sits the round out.
/// With no drops this costs exactly 2*(participants-1) messages.
RoundOutcome run_round(
    const std::vector<std::uint32_t>& members, std::uint32_t round,
    std::size_t rotation_period, Bus& bus,
    const std::function<std::optional<DenseVector>(std::uint32_t)>& update_of,
    const std::function<void(std::uint32_t, const DenseVector&)>& adopt);

}  // namespace p4net
