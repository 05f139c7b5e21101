#include <benchmark/benchmark.h>

#include <cstdint>
#include <optional>
#include <vector>

#include "p4net/features.hpp"
#include "p4net/network.hpp"
#include "p4net/numerics.hpp"
#include "p4net/privacy.hpp"

namespace {

p4net::Image random_image(std::size_t channels, std::size_t side, p4net::RandomSource& rng) {
  p4net::Image img;
  img.channels = channels;
  img.height = side;
  img.width = side;
  img.pixels.resize(channels * side * side);
  for (double& p : img.pixels) p = rng.next_double();
  return img;
}

void BM_ScatterTransform28(benchmark::State& state) {
  p4net::RandomSource rng(7, 0);
  const p4net::Image img = random_image(1, 28, rng);
  for (auto _ : state) {
    benchmark::DoNotOptimize(p4net::scatter_transform(img));
  }
}
BENCHMARK(BM_ScatterTransform28);

void BM_Privatize(benchmark::State& state) {
  const std::size_t dim = static_cast<std::size_t>(state.range(0));
  p4net::RandomSource rng(11, 0);
  std::vector<p4net::DenseVector> grads;
  for (std::size_t i = 0; i < 16; ++i) {
    p4net::DenseVector g(dim);
    for (std::size_t j = 0; j < dim; ++j) g[j] = rng.next_gaussian();
    grads.push_back(p4net::clip_gradient(g, 1.0));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(p4net::privatize(grads, 1.0, 5.0, 0.05, 320, rng));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations()));
}
BENCHMARK(BM_Privatize)->Arg(1 << 8)->Arg(1 << 12);

void BM_RunRound(benchmark::State& state) {
  const std::size_t members = static_cast<std::size_t>(state.range(0));
  const std::size_t dim = 512;
  p4net::RandomSource rng(13, 0);
  std::vector<p4net::DenseVector> models(members, p4net::DenseVector(dim));
  for (auto& m : models) {
    for (std::size_t j = 0; j < dim; ++j) m[j] = rng.next_gaussian();
  }
  std::vector<std::uint32_t> ids(members);
  for (std::size_t i = 0; i < members; ++i) ids[i] = static_cast<std::uint32_t>(i);

  std::uint32_t round = 1;
  for (auto _ : state) {
    p4net::Bus bus(0.0, p4net::RandomSource(17, 0));
    const p4net::RoundOutcome outcome = p4net::run_round(
        ids, round, 10, bus,
        [&](std::uint32_t id) { return std::optional<p4net::DenseVector>(models[id]); },
        [&](std::uint32_t id, const p4net::DenseVector& mean) { models[id] = mean; });
    benchmark::DoNotOptimize(outcome.messages);
    ++round;
  }
}
BENCHMARK(BM_RunRound)->Arg(4)->Arg(16);

}  // namespace

BENCHMARK_MAIN();
