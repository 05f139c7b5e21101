#include "p4net/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace p4net {
namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

void require_finite(const DenseVector& v, const char* op) {
  for (double x : v.data) {
    if (!std::isfinite(x)) throw DomainError(std::string(op) + ": non-finite input entry");
  }
}

}  // namespace

DenseMatrix::DenseMatrix(std::size_t r, std::size_t c, std::vector<double> values)
    : rows(r), cols(c), data(std::move(values)) {
  if (rows * cols != data.size()) {
    throw ShapeError("DenseMatrix: rows*cols does not match data length");
  }
}

RandomSource::RandomSource(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
  // xoshiro256++ state derived from (seed, stream_id) via splitmix64 so that
  // distinct streams of the same seed are decorrelated.
  std::uint64_t mix = seed ^ (0x6a09e667f3bcc909ULL + stream_id * 0x9e3779b97f4a7c15ULL);
  for (auto& s : state_) s = splitmix64(mix);
}

std::uint64_t RandomSource::next_u64() {
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double RandomSource::next_double() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RandomSource::next_below(std::uint64_t bound) {
  if (bound == 0) throw ParamError("RandomSource::next_below: bound must be > 0");
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

double RandomSource::next_gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  // Box-Muller; u1 bounded away from zero so the log stays finite.
  double u1;
  do {
    u1 = next_double();
  } while (u1 <= 1e-300);
  const double u2 = next_double();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  have_spare_ = true;
  return radius * std::cos(angle);
}

std::vector<std::size_t> RandomSource::shuffled_indices(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[next_below(i)]);
  }
  return idx;
}

std::vector<std::size_t> RandomSource::sample_without_replacement(std::size_t n, std::size_t k) {
  if (k > n) throw ParamError("sample_without_replacement: k exceeds population");
  auto idx = shuffled_indices(n);
  idx.resize(k);
  return idx;
}

DenseVector softmax(const DenseVector& logits) {
  if (logits.size() == 0) throw ShapeError("softmax: empty input");
  require_finite(logits, "softmax");
  const double peak = *std::max_element(logits.data.begin(), logits.data.end());
  DenseVector out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    sum += out[i];
  }
  for (double& x : out.data) x /= sum;
  return out;
}

double cross_entropy(const DenseVector& probs, std::size_t label) {
  if (label >= probs.size()) throw DomainError("cross_entropy: label out of range");
  return -std::log(std::max(probs[label], kProbFloor));
}

double kl_divergence(const DenseVector& p, const DenseVector& q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = std::max(p[i], kProbFloor);
    const double qi = std::max(q[i], kProbFloor);
    sum += pi * std::log(pi / qi);
  }
  // Floor effects can push the sum a hair below zero for near-identical inputs.
  return std::max(sum, 0.0);
}

double l1_distance(const DenseVector& a, const DenseVector& b) {
  if (a.size() != b.size()) throw ShapeError("l1_distance: length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += std::abs(a[i] - b[i]);
  return sum;
}

double l2_norm(const DenseVector& v) {
  double sum = 0.0;
  for (double x : v.data) sum += x * x;
  return std::sqrt(sum);
}

DenseVector gaussian_sample(RandomSource& rng, double sigma, std::size_t n) {
  if (sigma < 0.0) throw ParamError("gaussian_sample: sigma must be >= 0");
  DenseVector out(n);
  if (sigma == 0.0) return out;
  for (std::size_t i = 0; i < n; ++i) out[i] = sigma * rng.next_gaussian();
  return out;
}

DenseMatrix sgd_step(const DenseMatrix& params, const DenseMatrix& grad, double lr) {
  if (params.rows != grad.rows || params.cols != grad.cols) {
    throw ShapeError("sgd_step: parameter/gradient shape mismatch");
  }
  if (lr <= 0.0) throw ParamError("sgd_step: lr must be > 0");
  DenseMatrix out = params;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= lr * grad.data[i];
  return out;
}

}  // namespace p4net
