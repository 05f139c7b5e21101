#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "p4net/errors.hpp"

namespace p4net {

/// Dense 64-bit float vector. Carrier for flattened model weights,
/// gradients and feature rows.
struct DenseVector {
  std::vector<double> data;

  DenseVector() = default;
  explicit DenseVector(std::size_t n, double fill = 0.0) : data(n, fill) {}
  explicit DenseVector(std::vector<double> values) : data(std::move(values)) {}

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool operator==(const DenseVector& other) const { return data == other.data; }
};

/// Dense row-major 64-bit float matrix.
struct DenseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMatrix() = default;
  DenseMatrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}
  DenseMatrix(std::size_t r, std::size_t c, std::vector<double> values);

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }

  bool operator==(const DenseMatrix& other) const {
    return rows == other.rows && cols == other.cols && data == other.data;
  }
};

/// Deterministic random stream. Identical (seed, stream_id) pairs always
/// yield identical draw sequences, so per-client-per-purpose streams keep the
/// simulation reproducible under any client scheduling order.
class RandomSource {
public:
  RandomSource() : RandomSource(0, 0) {}
  RandomSource(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_id_; }

  /// Next raw 64-bit draw.
  std::uint64_t next_u64();
  /// Uniform double in [0, 1).
  double next_double();
  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t next_below(std::uint64_t bound);
  /// Standard normal draw (Box-Muller; fully specified, no libc distributions).
  double next_gaussian();

  /// Fisher-Yates shuffle of indices [0, n).
  std::vector<std::size_t> shuffled_indices(std::size_t n);
  /// k distinct values from [0, n) in draw order, k <= n.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint64_t state_[4] = {0, 0, 0, 0};
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Numerically stabilized softmax (max subtraction). Output sums to 1.
DenseVector softmax(const DenseVector& logits);

/// -log(probs[label]) with a 1e-12 probability floor before the log.
double cross_entropy(const DenseVector& probs, std::size_t label);

/// KL(p || q) = sum p*log(p/q) with the same 1e-12 floor. Never negative.
double kl_divergence(const DenseVector& p, const DenseVector& q);

/// sum |a_i - b_i|.
double l1_distance(const DenseVector& a, const DenseVector& b);

/// Euclidean norm.
double l2_norm(const DenseVector& v);

/// n i.i.d. N(0, sigma^2) draws. sigma = 0 yields exact zeros.
DenseVector gaussian_sample(RandomSource& rng, double sigma, std::size_t n);

/// params - lr * grad.
DenseMatrix sgd_step(const DenseMatrix& params, const DenseMatrix& grad, double lr);

/// Floor used before every log in the loss primitives.
inline constexpr double kProbFloor = 1e-12;

}  // namespace p4net
