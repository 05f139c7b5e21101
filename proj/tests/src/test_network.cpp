#include <cstdint>
#include <optional>
#include <set>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "p4net/errors.hpp"
#include "p4net/network.hpp"

using p4net::Bus;
using p4net::DenseMatrix;
using p4net::DenseVector;
using p4net::Message;
using p4net::MessageKind;
using p4net::RandomSource;

namespace {

Message small_message() {
  Message msg;
  msg.kind = MessageKind::kGradientShare;
  msg.sender = 1;
  msg.receiver = 2;
  msg.round = 3;
  msg.payload.push_back(DenseMatrix(2, 2, std::vector<double>{1.0, 2.0, 3.0, 4.0}));
  return msg;
}

}  // namespace

TEST_CASE("wire layout of a single 2x2 tensor message") {
  const auto bytes = p4net::serialize(small_message());
  REQUIRE(bytes.size() == 63);
  CHECK(bytes[0] == 'P');
  CHECK(bytes[1] == '4');
  CHECK(bytes[2] == 'N');
  CHECK(bytes[3] == 'T');
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == static_cast<std::uint8_t>(MessageKind::kGradientShare));
  CHECK(bytes[7] == 1);
  CHECK(bytes[11] == 2);
  CHECK(bytes[15] == 3);
  CHECK(bytes[19] == 1);
  CHECK(bytes[23] == 2);
  CHECK(bytes[27] == 2);
}

TEST_CASE("serialization roundtrips random messages exactly") {
  RandomSource rng(1, 0);
  for (int trial = 0; trial < 1000; ++trial) {
    const Message msg = testutil::random_message(rng);
    const Message back = p4net::deserialize(p4net::serialize(msg));
    CHECK(back.kind == msg.kind);
    CHECK(back.sender == msg.sender);
    CHECK(back.receiver == msg.receiver);
    CHECK(back.round == msg.round);
    REQUIRE(back.payload.size() == msg.payload.size());
    for (std::size_t t = 0; t < msg.payload.size(); ++t) {
      CHECK(back.payload[t] == msg.payload[t]);
    }
  }
}

TEST_CASE("deserialize rejects corrupt framing with located errors") {
  const auto good = p4net::serialize(small_message());

  auto corrupt = good;
  corrupt[0] = 'X';
  CHECK_THROWS_WITH_AS(p4net::deserialize(corrupt), doctest::Contains("magic"),
                       p4net::ParseError);

  corrupt = good;
  corrupt[4] = 9;
  CHECK_THROWS_WITH_AS(p4net::deserialize(corrupt), doctest::Contains("version"),
                       p4net::ParseError);

  corrupt = good;
  corrupt[6] = 200;
  CHECK_THROWS_WITH_AS(p4net::deserialize(corrupt), doctest::Contains("kind"),
                       p4net::ParseError);

  corrupt = good;
  corrupt.push_back(0);
  CHECK_THROWS_WITH_AS(p4net::deserialize(corrupt), doctest::Contains("trailing"),
                       p4net::ParseError);

  for (std::size_t cut : {2u, 10u, 20u, 30u, 62u}) {
    auto truncated = good;
    truncated.resize(cut);
    CHECK_THROWS_AS(p4net::deserialize(truncated), p4net::ParseError);
  }
}

TEST_CASE("bus delivers in order to the right receiver") {
  Bus bus(0.0, RandomSource(2, 0));
  Message a = small_message();
  Message b = small_message();
  b.payload[0].at(0, 0) = -1.0;
  bus.send(a);
  bus.send(b);
  Message other = small_message();
  other.receiver = 9;
  bus.send(other);

  const auto got = bus.drain(2);
  REQUIRE(got.size() == 2);
  CHECK(got[0].payload[0].at(0, 0) == doctest::Approx(1.0));
  CHECK(got[1].payload[0].at(0, 0) == doctest::Approx(-1.0));
  CHECK(bus.drain(2).empty());
  CHECK(bus.drain(9).size() == 1);
  CHECK(bus.sent_count() == 3);
  CHECK(bus.delivered_count() == 3);
  CHECK(bus.dropped_count() == 0);
}

TEST_CASE("bus rejects a sender whose round goes backwards") {
  Bus bus(0.0, RandomSource(3, 0));
  Message msg = small_message();
  msg.round = 5;
  bus.send(msg);
  msg.round = 7;
  bus.send(msg);
  msg.round = 6;
  CHECK_THROWS_AS(bus.send(msg), p4net::DomainError);
  msg.round = 7;
  CHECK_NOTHROW(bus.send(msg));
}

TEST_CASE("a lossy bus drops but still counts sends") {
  Bus bus(1.0, RandomSource(4, 0));
  std::size_t taps = 0, dropped_taps = 0;
  bus.set_tap([&](const Message&, bool dropped) {
    ++taps;
    if (dropped) ++dropped_taps;
  });
  for (std::uint32_t r = 1; r <= 5; ++r) {
    Message msg = small_message();
    msg.round = r;
    bus.send(msg);
  }
  CHECK(bus.sent_count() == 5);
  CHECK(bus.dropped_count() == 5);
  CHECK(bus.drain(2).empty());
  CHECK(taps == 5);
  CHECK(dropped_taps == 5);
}

TEST_CASE("aggregator election rotates through sorted members") {
  const std::vector<std::uint32_t> members{7, 3, 11};
  CHECK(p4net::elect_aggregator(members, 0, 10) == 3);
  CHECK(p4net::elect_aggregator(members, 9, 10) == 3);
  CHECK(p4net::elect_aggregator(members, 10, 10) == 7);
  CHECK(p4net::elect_aggregator(members, 20, 10) == 11);
  CHECK(p4net::elect_aggregator(members, 30, 10) == 3);
  CHECK_THROWS_AS(p4net::elect_aggregator({}, 0, 10), p4net::ParamError);
  CHECK_THROWS_AS(p4net::elect_aggregator(members, 0, 0), p4net::ParamError);
}

TEST_CASE("aggregation averages elementwise") {
  std::vector<DenseVector> updates{DenseVector(std::vector<double>{1.0, 3.0}),
                                   DenseVector(std::vector<double>{3.0, 5.0})};
  const DenseVector mean = p4net::aggregate_proxy(updates);
  CHECK(mean[0] == doctest::Approx(2.0));
  CHECK(mean[1] == doctest::Approx(4.0));
  CHECK_THROWS_AS(p4net::aggregate_proxy(std::vector<DenseVector>{}), p4net::ParamError);
}

TEST_CASE("a full round leaves every member with the identical mean proxy") {
  std::vector<std::uint32_t> members{4, 1, 8};
  std::vector<DenseVector> models(9, DenseVector(3));
  models[1] = DenseVector(std::vector<double>{1.0, 0.0, 0.0});
  models[4] = DenseVector(std::vector<double>{0.0, 2.0, 0.0});
  models[8] = DenseVector(std::vector<double>{0.0, 0.0, 6.0});

  Bus bus(0.0, RandomSource(5, 0));
  const auto outcome = p4net::run_round(
      members, 1, 10, bus,
      [&](std::uint32_t id) { return std::optional<DenseVector>(models[id]); },
      [&](std::uint32_t id, const DenseVector& mean) { models[id] = mean; });

  CHECK(outcome.aggregator == 1);
  CHECK(outcome.participants == std::vector<std::uint32_t>{1, 4, 8});
  CHECK(outcome.messages == 4);
  CHECK(bus.sent_count() == 4);
  for (std::uint32_t id : members) {
    CHECK(models[id].data == std::vector<double>{1.0 / 3.0, 2.0 / 3.0, 2.0});
  }
}

TEST_CASE("members without budget sit out and a lone survivor sends nothing") {
  std::vector<std::uint32_t> members{0, 1, 2};
  std::vector<DenseVector> models(3, DenseVector(std::vector<double>{1.0}));
  models[2] = DenseVector(std::vector<double>{7.0});
  Bus bus(0.0, RandomSource(6, 0));

  const auto outcome = p4net::run_round(
      members, 1, 10, bus,
      [&](std::uint32_t id) {
        return id == 2 ? std::optional<DenseVector>(models[id]) : std::nullopt;
      },
      [&](std::uint32_t id, const DenseVector& mean) { models[id] = mean; });

  CHECK(outcome.participants == std::vector<std::uint32_t>{2});
  CHECK(outcome.messages == 0);
  CHECK(bus.sent_count() == 0);
  CHECK(models[2][0] == doctest::Approx(7.0));
  CHECK(models[0][0] == doctest::Approx(1.0));
}

TEST_CASE("rounds repeated over time rotate the aggregator") {
  std::vector<std::uint32_t> members{0, 1};
  std::vector<DenseVector> models(2, DenseVector(std::vector<double>{1.0}));
  Bus bus(0.0, RandomSource(7, 0));
  std::set<std::uint32_t> aggregators;
  for (std::uint32_t r = 1; r <= 4; ++r) {
    const auto outcome = p4net::run_round(
        members, r, 2, bus,
        [&](std::uint32_t id) { return std::optional<DenseVector>(models[id]); },
        [&](std::uint32_t id, const DenseVector& mean) { models[id] = mean; });
    aggregators.insert(outcome.aggregator);
  }
  CHECK(aggregators == std::set<std::uint32_t>{0, 1});
}
