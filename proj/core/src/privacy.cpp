#include "p4net/privacy.hpp"

#include <cmath>
#include <string>

namespace p4net {

void validate(const DpConfig& cfg) {
  if (!(cfg.epsilon > 0.0)) {
    throw ParamError("dp config: epsilon must be > 0, got " + std::to_string(cfg.epsilon));
  }
  if (!(cfg.delta > 0.0 && cfg.delta < 1.0)) {
    throw ParamError("dp config: delta must be in (0,1), got " + std::to_string(cfg.delta));
  }
  if (!(cfg.clip > 0.0)) {
    throw ParamError("dp config: clip must be > 0, got " + std::to_string(cfg.clip));
  }
  if (!(cfg.sample_ratio > 0.0 && cfg.sample_ratio <= 1.0)) {
    throw ParamError("dp config: sample_ratio must be in (0,1], got " +
                     std::to_string(cfg.sample_ratio));
  }
  if (cfg.local_steps == 0) throw ParamError("dp config: local_steps must be >= 1");
  if (cfg.rounds == 0) throw ParamError("dp config: rounds must be >= 1");
  if (!(cfg.c_sigma > 0.0)) {
    throw ParamError("dp config: c_sigma must be > 0, got " + std::to_string(cfg.c_sigma));
  }
}

DenseVector clip_gradient(const DenseVector& g, double C) {
  if (!(C > 0.0)) {
    throw ParamError("clip_gradient: bound must be > 0, got " + std::to_string(C));
  }
  const double norm = l2_norm(g);
  if (norm <= C) return g;
  DenseVector out = g;
  const double scale = C / norm;
  for (double& v : out.data) v *= scale;
  return out;
}

DenseVector privatize(const std::vector<DenseVector>& clipped_grads, double C,
                      double sigma_g, double s, std::size_t R, RandomSource& rng) {
  if (clipped_grads.empty()) throw ParamError("privatize: no gradients");
  if (!(C > 0.0)) throw ParamError("privatize: clip bound must be > 0");
  if (!(sigma_g >= 0.0)) throw ParamError("privatize: sigma_g must be >= 0");
  if (!(s > 0.0) || R == 0) throw ParamError("privatize: s*R must be > 0");

  const std::size_t dim = clipped_grads.front().size();
  DenseVector out(dim);
  for (const DenseVector& g : clipped_grads) {
    if (g.size() != dim) throw ShapeError("privatize: gradient sizes differ");
    for (std::size_t i = 0; i < dim; ++i) out[i] += g[i];
  }
  const double inv_sr = 1.0 / (s * static_cast<double>(R));
  for (std::size_t i = 0; i < dim; ++i) out[i] *= inv_sr;

  const double noise_std = 2.0 * C * sigma_g * inv_sr;
  const DenseVector noise = gaussian_sample(rng, noise_std, dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] += noise[i];
  return out;
}

double calibrate_sigma(const DpConfig& cfg) {
  validate(cfg);
  const double T = static_cast<double>(cfg.rounds);
  const double K = static_cast<double>(cfg.local_steps);
  const double inner =
      T * K * std::log(2.0 * T / cfg.delta) * std::log(2.0 / cfg.delta);
  return cfg.c_sigma * cfg.sample_ratio * std::sqrt(inner) / cfg.epsilon;
}

void ledger_charge(PrivacyLedger& ledger) {
  if (ledger.rounds_used >= ledger.rounds_budget) {
    throw BudgetError("privacy ledger: budget of " +
                      std::to_string(ledger.rounds_budget) + " rounds exhausted");
  }
  ++ledger.rounds_used;
}

}  // namespace p4net
