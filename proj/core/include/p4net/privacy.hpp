#pragma once

#include <cstddef>
#include <vector>

#include "p4net/errors.hpp"
#include "p4net/numerics.hpp"

namespace p4net {

/// Differential privacy knobs for one experiment.
struct DpConfig {
  double epsilon = 15.0;
  double delta = 0.01;     // callers usually set 1/R
  double clip = 1.0;       // per-example l2 bound C
  double sample_ratio = 0.05;
  std::size_t local_steps = 1;
  std::size_t rounds = 100;
  double c_sigma = 1.0;    // calibration constant in front of the noise bound
};

/// Throws ParamError unless every field is in range.
void validate(const DpConfig& cfg);

/// Per-client spend tracker. The noise level is calibrated up front for a
/// fixed number of rounds, so the budget is simply that round count.
struct PrivacyLedger {
  std::size_t rounds_used = 0;
  std::size_t rounds_budget = 0;

  bool exhausted() const { return rounds_used == rounds_budget; }
};

/// g scaled by min(1, C/||g||2). Output norm never exceeds C.
DenseVector clip_gradient(const DenseVector& g, double C);

/// Noisy averaged update from already-clipped per-example gradients:
/// sum / (s*R) plus per-coordinate Gaussian noise of std 2*C*sigma_g/(s*R).
DenseVector privatize(const std::vector<DenseVector>& clipped_grads, double C,
                      double sigma_g, double s, std::size_t R, RandomSource& rng);

/// Noise scale that spends (epsilon, delta) over the configured number of
/// rounds: c_sigma * s * sqrt(T*K*ln(2T/delta)*ln(2/delta)) / epsilon.
double calibrate_sigma(const DpConfig& cfg);

/// Records one round of spend. Charging past the budget is a hard error so
/// no caller can keep emitting shared gradients by accident.
void ledger_charge(PrivacyLedger& ledger);

}  // namespace p4net
