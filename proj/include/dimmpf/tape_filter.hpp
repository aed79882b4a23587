#pragma once

#include <span>
#include <vector>

#include "dimmpf/filter_types.hpp"
#include "dimmpf/model.hpp"
#include "dimmpf/tape.hpp"

namespace dimmpf {

// Differentiable filter outputs. log_wsum[t] is calibrated so that
// sum_t log_wsum[t] - (T+1) log N estimates the log marginal likelihood:
// the deterministic-allocation weights of the forward recursion carry a
// constant 1/N_reg^2 per step relative to the calibrated importance weight,
// which is compensated here (gradients are unaffected by constants).
struct TapeFilterOutput {
  std::vector<Var> mean;      // per-step filtering means (state mode)
  std::vector<Var> log_wsum;  // per-step log sum of unnormalized weights
  // forward values of the per-step unnormalized weights (common log-shift
  // removed), retained when requested
  std::vector<std::vector<double>> step_weights;
};

// Full state-mode filter: regimes assigned in equal deterministic blocks,
// ancestors drawn from the posterior-weighted K-tilted coupling, states
// propagated by reparameterised sampling, weights per the selected gradient
// estimator (all estimators share the same forward values).
TapeFilterOutput run_tape_filter(Tape& tape, TapeModel& model, std::span<const double> obs,
                                 const FilterConfig& cfg, RandomStream& rng,
                                 bool keep_weights = false);

// Likelihood-mode filter: the ground-truth states become observations, the
// particle state is {regime, cache} only, and the per-particle factor is the
// per-regime joint density of (x_t, y_t), precomputed once per step.
TapeFilterOutput run_tape_likelihood_filter(Tape& tape, TapeModel& model,
                                            std::span<const double> truth_x,
                                            std::span<const double> obs,
                                            const FilterConfig& cfg, RandomStream& rng,
                                            bool keep_weights = false);

// Equal deterministic regime blocks: particle n (0-based) gets regime
// floor(n * n_reg / N); requires N to be a positive multiple of n_reg.
std::vector<int> block_regime_assignment(int particles, int n_reg);

}  // namespace dimmpf
