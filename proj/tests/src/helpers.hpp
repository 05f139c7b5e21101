#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "p4net/models.hpp"
#include "p4net/network.hpp"
#include "p4net/numerics.hpp"

namespace testutil {

inline double rel_error(double got, double want) {
  const double scale = std::max({std::abs(got), std::abs(want), 1e-12});
  return std::abs(got - want) / scale;
}

/// Relative error with the scale floored at 1, so coordinates near zero are
/// judged on absolute error instead of blowing up the ratio.
inline double rel_error_unit(double got, double want) {
  const double scale = std::max({std::abs(got), std::abs(want), 1.0});
  return std::abs(got - want) / scale;
}

inline std::filesystem::path fresh_temp_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("p4net_test_" + tag + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline p4net::DenseVector random_vector(std::size_t n, p4net::RandomSource& rng,
                                        double scale = 1.0) {
  p4net::DenseVector v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = scale * rng.next_gaussian();
  return v;
}

inline p4net::LinearClassifier random_model(std::size_t classes, std::size_t dim,
                                            p4net::RandomSource& rng,
                                            double scale = 0.5) {
  p4net::LinearClassifier model(classes, dim);
  for (double& w : model.weights.data) w = scale * rng.next_gaussian();
  for (double& b : model.bias.data) b = scale * rng.next_gaussian();
  return model;
}

inline p4net::Minibatch random_batch(std::size_t n, std::size_t classes,
                                     std::size_t dim, p4net::RandomSource& rng) {
  p4net::Minibatch batch;
  for (std::size_t i = 0; i < n; ++i) {
    batch.indices.push_back(i);
    batch.features.push_back(random_vector(dim, rng));
    batch.labels.push_back(rng.next_below(classes));
  }
  return batch;
}

/// Central difference gradient of batch_loss over the flattened parameters.
inline p4net::DenseVector finite_diff_grad(const p4net::LinearClassifier& model,
                                           const p4net::Minibatch& batch,
                                           const p4net::LossSpec& spec,
                                           double h = 1e-6) {
  const p4net::DenseVector theta = model.flatten();
  p4net::DenseVector grad(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    p4net::DenseVector lo = theta, hi = theta;
    lo[i] -= h;
    hi[i] += h;
    const auto m_lo = p4net::unflatten(lo, model.num_classes(), model.feature_dim());
    const auto m_hi = p4net::unflatten(hi, model.num_classes(), model.feature_dim());
    grad[i] = (p4net::batch_loss(m_hi, batch, spec) -
               p4net::batch_loss(m_lo, batch, spec)) /
              (2.0 * h);
  }
  return grad;
}

inline p4net::Message random_message(p4net::RandomSource& rng) {
  p4net::Message msg;
  msg.kind = static_cast<p4net::MessageKind>(rng.next_below(5));
  msg.sender = static_cast<std::uint32_t>(rng.next_u64());
  msg.receiver = static_cast<std::uint32_t>(rng.next_u64());
  msg.round = static_cast<std::uint32_t>(rng.next_u64());
  const std::size_t tensors = rng.next_below(4);
  for (std::size_t t = 0; t < tensors; ++t) {
    const std::size_t rows = 1 + rng.next_below(5);
    const std::size_t cols = 1 + rng.next_below(7);
    p4net::DenseMatrix m(rows, cols);
    for (double& v : m.data) {
      switch (rng.next_below(8)) {
        case 0: v = 0.0; break;
        case 1: v = -0.0; break;
        case 2: v = 1e300 * rng.next_gaussian(); break;
        case 3: v = 1e-300 * rng.next_gaussian(); break;
        default: v = rng.next_gaussian(); break;
      }
    }
    msg.payload.push_back(std::move(m));
  }
  return msg;
}

}  // namespace testutil
