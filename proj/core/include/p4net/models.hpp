#pragma once

#include <cstddef>
#include <vector>

#include "p4net/errors.hpp"
#include "p4net/numerics.hpp"

namespace p4net {

/// Linear softmax classifier over flattened feature vectors. Parameters
/// start at zero so that freshly created clients are indistinguishable
/// until trained.
struct LinearClassifier {
  DenseMatrix weights;  // num_classes x feature_dim
  DenseVector bias;     // num_classes

  LinearClassifier() = default;
  LinearClassifier(std::size_t num_classes, std::size_t feature_dim)
      : weights(num_classes, feature_dim), bias(num_classes) {}

  std::size_t num_classes() const { return bias.size(); }
  std::size_t feature_dim() const { return weights.cols; }
  std::size_t param_count() const { return weights.size() + bias.size(); }

  /// Weight rows in order, then the bias.
  DenseVector flatten() const;
  /// params += scale * delta, with delta in flatten() layout.
  void add_scaled(const DenseVector& delta, double scale);
};

/// Rebuild a classifier from its flatten() layout.
LinearClassifier unflatten(const DenseVector& params, std::size_t num_classes,
                           std::size_t feature_dim);

/// Class probabilities softmax(W x + b).
DenseVector forward(const LinearClassifier& model, const DenseVector& x);

/// The two mutually distilling models one client owns. The proxy is the
/// only model that ever leaves the device.
struct DistillPair {
  LinearClassifier private_model;
  LinearClassifier proxy_model;
  double alpha = 0.5;  // distillation weight in the proxy objective
  double beta = 0.5;   // distillation weight in the private objective
};

struct Minibatch {
  std::vector<std::size_t> indices;  // positions in the client's train set
  std::vector<DenseVector> features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

/// ceil(ratio * n) examples drawn without replacement from parallel
/// feature/label arrays.
Minibatch sample_minibatch(const std::vector<DenseVector>& features,
                           const std::vector<std::size_t>& labels, double ratio,
                           RandomSource& rng);

/// Loss shape shared by both objectives:
///   (1 - mix) * cross-entropy + mix * KL(student || teacher)
/// where the teacher's probabilities are held constant.
struct LossSpec {
  double mix = 0.0;
  const LinearClassifier* teacher = nullptr;  // required when mix > 0
};

/// Mean loss over the batch.
double batch_loss(const LinearClassifier& model, const Minibatch& batch,
                  const LossSpec& spec);

/// Flattened gradient of each example's own loss, one vector per example.
/// Their mean equals the full-batch gradient.
std::vector<DenseVector> per_example_grads(const LinearClassifier& model,
                                           const Minibatch& batch,
                                           const LossSpec& spec);

struct ProxyLossResult {
  double loss = 0.0;
  std::vector<DenseVector> per_example;  // proxy gradients, ready for clipping
};

struct PrivateLossResult {
  double loss = 0.0;
  DenseVector grad;  // mean gradient of the private model
};

/// (1-alpha)*CE(proxy) + alpha*KL(proxy || private); the private model is a
/// constant target here.
ProxyLossResult proxy_loss(const DistillPair& pair, const Minibatch& batch);

/// (1-beta)*CE(private) + beta*KL(private || proxy); the proxy is a constant
/// target here.
PrivateLossResult private_loss(const DistillPair& pair, const Minibatch& batch);

/// Fraction of examples whose top-probability class matches the label.
/// Ties resolve to the lowest class index.
double evaluate(const LinearClassifier& model,
                const std::vector<DenseVector>& features,
                const std::vector<std::size_t>& labels);

}  // namespace p4net
