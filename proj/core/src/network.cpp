#include "p4net/network.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <string>

namespace p4net {

namespace {

constexpr char kMagic[4] = {'P', '4', 'N', 'T'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

/// Cursor over a byte buffer; every read names the field it was after.
struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* field) {
    if (pos + n > bytes.size()) {
      throw ParseError(std::string("message truncated reading ") + field + " at byte " +
                       std::to_string(pos));
    }
  }
  std::uint8_t u8(const char* field) {
    need(1, field);
    return bytes[pos++];
  }
  std::uint16_t u16(const char* field) {
    need(2, field);
    std::uint16_t v = static_cast<std::uint16_t>(bytes[pos]) |
                      static_cast<std::uint16_t>(bytes[pos + 1]) << 8;
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  double f64(const char* field) {
    need(8, field);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
};

}  // namespace

std::vector<std::uint8_t> serialize(const Message& msg) {
  if (static_cast<std::uint8_t>(msg.kind) > 4) {
    throw ParamError("serialize: unknown message kind " +
                     std::to_string(static_cast<int>(msg.kind)));
  }
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u16(out, kWireVersion);
  out.push_back(static_cast<std::uint8_t>(msg.kind));
  put_u32(out, msg.sender);
  put_u32(out, msg.receiver);
  put_u32(out, msg.round);
  put_u32(out, static_cast<std::uint32_t>(msg.payload.size()));
  for (const DenseMatrix& t : msg.payload) {
    if (t.data.size() != t.rows * t.cols) {
      throw ShapeError("serialize: tensor data does not match declared shape");
    }
    put_u32(out, static_cast<std::uint32_t>(t.rows));
    put_u32(out, static_cast<std::uint32_t>(t.cols));
    for (double v : t.data) put_f64(out, v);
  }
  return out;
}

Message deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("bad magic, expected P4NT");
  }
  r.pos = 4;
  const std::uint16_t version = r.u16("version");
  if (version != kWireVersion) {
    throw ParseError("unsupported version " + std::to_string(version) + ", expected " +
                     std::to_string(kWireVersion));
  }
  Message msg;
  const std::uint8_t kind = r.u8("kind");
  if (kind > 4) throw ParseError("unknown kind " + std::to_string(kind));
  msg.kind = static_cast<MessageKind>(kind);
  msg.sender = r.u32("sender");
  msg.receiver = r.u32("receiver");
  msg.round = r.u32("round");
  const std::uint32_t count = r.u32("payload count");
  msg.payload.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string label = "tensor " + std::to_string(t);
    const std::uint32_t rows = r.u32((label + " rows").c_str());
    const std::uint32_t cols = r.u32((label + " cols").c_str());
    const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
    r.need(n * 8, (label + " data").c_str());
    DenseMatrix m(rows, cols);
    for (std::uint64_t i = 0; i < n; ++i) m.data[i] = r.f64("tensor data");
    msg.payload.push_back(std::move(m));
  }
  if (r.pos != bytes.size()) {
    throw ParseError(std::to_string(bytes.size() - r.pos) + " trailing bytes after payload");
  }
  return msg;
}

Bus::Bus(double drop_probability, RandomSource rng)
    : drop_probability_(drop_probability), rng_(rng) {
  if (!(drop_probability >= 0.0 && drop_probability < 1.0)) {
    throw ParamError("bus: drop probability must be in [0,1), got " +
                     std::to_string(drop_probability));
  }
}

void Bus::send(const Message& msg) {
  const auto it = last_round_.find(msg.sender);
  if (it != last_round_.end() && msg.round < it->second) {
    throw DomainError("bus: sender " + std::to_string(msg.sender) + " sent round " +
                      std::to_string(msg.round) + " after round " +
                      std::to_string(it->second));
  }
  last_round_[msg.sender] = msg.round;

  std::vector<std::uint8_t> bytes = serialize(msg);
  ++sent_;
  const bool dropped = drop_probability_ > 0.0 && rng_.next_double() < drop_probability_;
  if (tap_) tap_(msg, dropped);
  if (dropped) {
    ++dropped_;
    return;
  }
  queues_[msg.receiver].push_back(std::move(bytes));
}

std::vector<Message> Bus::drain(std::uint32_t receiver) {
  std::vector<Message> out;
  const auto it = queues_.find(receiver);
  if (it == queues_.end()) return out;
  for (const auto& bytes : it->second) out.push_back(deserialize(bytes));
  delivered_ += out.size();
  queues_.erase(it);
  return out;
}

std::uint32_t elect_aggregator(const std::vector<std::uint32_t>& members,
                               std::uint32_t round, std::size_t rotation_period) {
  if (members.empty()) throw ParamError("elect_aggregator: empty group");
  if (rotation_period == 0) throw ParamError("elect_aggregator: rotation period must be >= 1");
  std::vector<std::uint32_t> sorted = members;
  std::sort(sorted.begin(), sorted.end());
  return sorted[(round / rotation_period) % sorted.size()];
}

std::vector<DenseMatrix> aggregate_proxy(const std::vector<std::vector<DenseMatrix>>& updates) {
  if (updates.empty()) throw ParamError("aggregate_proxy: no updates");
  std::vector<DenseMatrix> mean = updates.front();
  for (std::size_t u = 1; u < updates.size(); ++u) {
    const auto& set = updates[u];
    if (set.size() != mean.size()) {
      throw ShapeError("aggregate_proxy: update " + std::to_string(u) +
                       " has a different tensor count");
    }
    for (std::size_t t = 0; t < set.size(); ++t) {
      if (set[t].rows != mean[t].rows || set[t].cols != mean[t].cols) {
        throw ShapeError("aggregate_proxy: tensor " + std::to_string(t) +
                         " shape mismatch in update " + std::to_string(u));
      }
      for (std::size_t i = 0; i < set[t].data.size(); ++i) mean[t].data[i] += set[t].data[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(updates.size());
  for (DenseMatrix& t : mean) {
    for (double& v : t.data) v *= inv;
  }
  return mean;
}

DenseVector aggregate_proxy(const std::vector<DenseVector>& updates) {
  if (updates.empty()) throw ParamError("aggregate_proxy: no updates");
  DenseVector mean = updates.front();
  for (std::size_t u = 1; u < updates.size(); ++u) {
    if (updates[u].size() != mean.size()) {
      throw ShapeError("aggregate_proxy: update " + std::to_string(u) + " has size " +
                       std::to_string(updates[u].size()) + ", expected " +
                       std::to_string(mean.size()));
    }
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += updates[u][i];
  }
  const double inv = 1.0 / static_cast<double>(updates.size());
  for (double& v : mean.data) v *= inv;
  return mean;
}

RoundOutcome run_round(
    const std::vector<std::uint32_t>& members, std::uint32_t round,
    std::size_t rotation_period, Bus& bus,
    const std::function<std::optional<DenseVector>(std::uint32_t)>& update_of,
    const std::function<void(std::uint32_t, const DenseVector&)>& adopt) {
  if (members.empty()) throw ParamError("run_round: empty group");

  std::vector<std::uint32_t> sorted = members;
  std::sort(sorted.begin(), sorted.end());

  std::vector<std::uint32_t> live;
  std::vector<DenseVector> updates;  // parallel to live
  for (std::uint32_t id : sorted) {
    if (auto u = update_of(id)) {
      live.push_back(id);
      updates.push_back(std::move(*u));
    }
  }

  RoundOutcome outcome;
  outcome.participants = live;
  if (live.empty()) return outcome;
  outcome.aggregator = elect_aggregator(live, round, rotation_period);

  for (std::size_t i = 0; i < live.size(); ++i) {
    if (live[i] == outcome.aggregator) continue;
    Message msg;
    msg.kind = MessageKind::kGradientShare;
    msg.sender = live[i];
    msg.receiver = outcome.aggregator;
    msg.round = round;
    msg.payload.push_back(DenseMatrix(1, updates[i].size(), updates[i].data));
    bus.send(msg);
    ++outcome.messages;
  }

  // The aggregator's own update joins whatever survived the wire.
  std::vector<DenseVector> received;
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (live[i] == outcome.aggregator) received.push_back(updates[i]);
  }
  for (const Message& msg : bus.drain(outcome.aggregator)) {
    if (msg.kind != MessageKind::kGradientShare || msg.round != round) continue;
    if (msg.payload.size() != 1) {
      throw ShapeError("run_round: gradient share must carry exactly one tensor");
    }
    received.push_back(DenseVector(msg.payload.front().data));
  }
  const DenseVector mean = aggregate_proxy(received);
  adopt(outcome.aggregator, mean);

  for (std::uint32_t id : live) {
    if (id == outcome.aggregator) continue;
    Message msg;
    msg.kind = MessageKind::kModelBroadcast;
    msg.sender = outcome.aggregator;
    msg.receiver = id;
    msg.round = round;
    msg.payload.push_back(DenseMatrix(1, mean.size(), mean.data));
    bus.send(msg);
    ++outcome.messages;
  }
  for (std::uint32_t id : live) {
    if (id == outcome.aggregator) continue;
    for (const Message& msg : bus.drain(id)) {
      if (msg.kind != MessageKind::kModelBroadcast || msg.round != round) continue;
      if (msg.payload.size() != 1) {
        throw ShapeError("run_round: model broadcast must carry exactly one tensor");
      }
      adopt(id, DenseVector(msg.payload.front().data));
    }
  }
  return outcome;
}

}  // namespace p4net
