#include "p4net/models.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace p4net {

namespace {

void check_pair(const DistillPair& pair) {
  const LinearClassifier& a = pair.private_model;
  const LinearClassifier& b = pair.proxy_model;
  if (a.weights.rows != b.weights.rows || a.weights.cols != b.weights.cols ||
      a.bias.size() != b.bias.size()) {
    throw ShapeError("distill pair: private and proxy model shapes differ");
  }
  if (!(pair.alpha >= 0.0 && pair.alpha <= 1.0)) {
    throw ParamError("distill pair: alpha must be in [0,1], got " + std::to_string(pair.alpha));
  }
  if (!(pair.beta >= 0.0 && pair.beta <= 1.0)) {
    throw ParamError("distill pair: beta must be in [0,1], got " + std::to_string(pair.beta));
  }
}

void check_spec(const LossSpec& spec, const LinearClassifier& model) {
  if (!(spec.mix >= 0.0 && spec.mix <= 1.0)) {
    throw ParamError("loss spec: mix must be in [0,1], got " + std::to_string(spec.mix));
  }
  if (spec.mix > 0.0) {
    if (spec.teacher == nullptr) {
      throw ParamError("loss spec: mix > 0 requires a teacher model");
    }
    if (spec.teacher->num_classes() != model.num_classes() ||
        spec.teacher->feature_dim() != model.feature_dim()) {
      throw ShapeError("loss spec: teacher and student model shapes differ");
    }
  }
}

}  // namespace

DenseVector LinearClassifier::flatten() const {
  DenseVector out(param_count());
  std::copy(weights.data.begin(), weights.data.end(), out.data.begin());
  std::copy(bias.data.begin(), bias.data.end(), out.data.begin() + weights.size());
  return out;
}

void LinearClassifier::add_scaled(const DenseVector& delta, double scale) {
  if (delta.size() != param_count()) {
    throw ShapeError("add_scaled: delta has " + std::to_string(delta.size()) +
                     " entries, model has " + std::to_string(param_count()));
  }
  const std::size_t nw = weights.size();
  for (std::size_t i = 0; i < nw; ++i) weights.data[i] += scale * delta[i];
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] += scale * delta[nw + i];
}

LinearClassifier unflatten(const DenseVector& params, std::size_t num_classes,
                           std::size_t feature_dim) {
  if (params.size() != num_classes * feature_dim + num_classes) {
    throw ShapeError("unflatten: expected " +
                     std::to_string(num_classes * feature_dim + num_classes) +
                     " parameters, got " + std::to_string(params.size()));
  }
  LinearClassifier model(num_classes, feature_dim);
  const std::size_t nw = model.weights.size();
  std::copy(params.data.begin(), params.data.begin() + nw, model.weights.data.begin());
  std::copy(params.data.begin() + nw, params.data.end(), model.bias.data.begin());
  return model;
}

DenseVector forward(const LinearClassifier& model, const DenseVector& x) {
  if (x.size() != model.feature_dim()) {
    throw ShapeError("forward: input has " + std::to_string(x.size()) +
                     " features, model expects " + std::to_string(model.feature_dim()));
  }
  if (model.bias.size() != model.weights.rows) {
    throw ShapeError("forward: bias size does not match weight rows");
  }
  DenseVector logits(model.num_classes());
  for (std::size_t i = 0; i < model.weights.rows; ++i) {
    double acc = model.bias[i];
    const double* row = model.weights.data.data() + i * model.weights.cols;
    for (std::size_t j = 0; j < model.weights.cols; ++j) acc += row[j] * x[j];
    logits[i] = acc;
  }
  return softmax(logits);
}

Minibatch sample_minibatch(const std::vector<DenseVector>& features,
                           const std::vector<std::size_t>& labels, double ratio,
                           RandomSource& rng) {
  if (features.size() != labels.size()) {
    throw ShapeError("sample_minibatch: feature/label count mismatch");
  }
  if (features.empty()) throw ParamError("sample_minibatch: empty train set");
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw ParamError("sample_minibatch: ratio must be in (0,1], got " + std::to_string(ratio));
  }
  const std::size_t n = features.size();
  std::size_t k = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);

  Minibatch batch;
  batch.indices = rng.sample_without_replacement(n, k);
  batch.features.reserve(k);
  batch.labels.reserve(k);
  for (std::size_t idx : batch.indices) {
    batch.features.push_back(features[idx]);
    batch.labels.push_back(labels[idx]);
  }
  return batch;
}

double batch_loss(const LinearClassifier& model, const Minibatch& batch,
                  const LossSpec& spec) {
  if (batch.size() == 0) throw ParamError("batch_loss: empty batch");
  check_spec(spec, model);
  double total = 0.0;
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const DenseVector probs = forward(model, batch.features[e]);
    double loss = (1.0 - spec.mix) * cross_entropy(probs, batch.labels[e]);
    if (spec.mix > 0.0) {
      const DenseVector target = forward(*spec.teacher, batch.features[e]);
      loss += spec.mix * kl_divergence(probs, target);
    }
    total += loss;
  }
  return total / static_cast<double>(batch.size());
}

std::vector<DenseVector> per_example_grads(const LinearClassifier& model,
                                           const Minibatch& batch,
                                           const LossSpec& spec) {
  if (batch.size() == 0) throw ParamError("per_example_grads: empty batch");
  check_spec(spec, model);
  const std::size_t L = model.num_classes();
  const std::size_t D = model.feature_dim();

  std::vector<DenseVector> grads;
  grads.reserve(batch.size());
  for (std::size_t e = 0; e < batch.size(); ++e) {
    const DenseVector& x = batch.features[e];
    const std::size_t y = batch.labels[e];
    if (y >= L) {
      throw ShapeError("per_example_grads: label " + std::to_string(y) +
                       " outside " + std::to_string(L) + " classes");
    }
    const DenseVector probs = forward(model, x);

    // Gradient of the loss with respect to the logits. For cross-entropy
    // this is p - onehot(y); for KL(p || t) with constant t it is
    // p_j * (log(p_j / t_j) - KL).
    DenseVector dz(L);
    for (std::size_t j = 0; j < L; ++j) dz[j] = (1.0 - spec.mix) * probs[j];
    dz[y] -= 1.0 - spec.mix;
    if (spec.mix > 0.0) {
      const DenseVector target = forward(*spec.teacher, x);
      const double kl = kl_divergence(probs, target);
      for (std::size_t j = 0; j < L; ++j) {
        const double lr = std::log(std::max(probs[j], kProbFloor) /
                                   std::max(target[j], kProbFloor));
        dz[j] += spec.mix * probs[j] * (lr - kl);
      }
    }

    DenseVector g(L * D + L);
    for (std::size_t j = 0; j < L; ++j) {
      for (std::size_t d = 0; d < D; ++d) g[j * D + d] = dz[j] * x[d];
      g[L * D + j] = dz[j];
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

ProxyLossResult proxy_loss(const DistillPair& pair, const Minibatch& batch) {
  check_pair(pair);
  const LossSpec spec{pair.alpha, &pair.private_model};
  ProxyLossResult result;
  result.loss = batch_loss(pair.proxy_model, batch, spec);
  result.per_example = per_example_grads(pair.proxy_model, batch, spec);
  return result;
}

PrivateLossResult private_loss(const DistillPair& pair, const Minibatch& batch) {
  check_pair(pair);
  const LossSpec spec{pair.beta, &pair.proxy_model};
  PrivateLossResult result;
  result.loss = batch_loss(pair.private_model, batch, spec);
  const std::vector<DenseVector> grads =
      per_example_grads(pair.private_model, batch, spec);
  result.grad = DenseVector(grads.front().size());
  for (const DenseVector& g : grads) {
    for (std::size_t i = 0; i < g.size(); ++i) result.grad[i] += g[i];
  }
  const double inv = 1.0 / static_cast<double>(grads.size());
  for (std::size_t i = 0; i < result.grad.size(); ++i) result.grad[i] *= inv;
  return result;
}

double evaluate(const LinearClassifier& model,
                const std::vector<DenseVector>& features,
                const std::vector<std::size_t>& labels) {
  if (features.size() != labels.size()) {
    throw ShapeError("evaluate: feature/label count mismatch");
  }
  if (features.empty()) throw ParamError("evaluate: empty test set");
  std::size_t correct = 0;
  for (std::size_t e = 0; e < features.size(); ++e) {
    const DenseVector probs = forward(model, features[e]);
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.size(); ++j) {
      if (probs[j] > probs[best]) best = j;
    }
    if (best == labels[e]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(features.size());
}

}  // namespace p4net
