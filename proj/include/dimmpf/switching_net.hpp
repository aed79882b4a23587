#pragma once

#include <span>
#include <vector>

#include "dimmpf/rng.hpp"
#include "dimmpf/tape.hpp"
#include "dimmpf/theta_store.hpp"

namespace dimmpf {

// Gated regime-cache update and regime-probability head. The cache update is
//   r' = sigmoid(Th1 r) . sigmoid(Th2 k') . r + tanh(Th3 k'),
// and the transition law is
//   K(k | r) = (|Th4 tanh(Th5 r)| + eps)_k / sum over regimes,
// with k' the one-hot regime encoding. The eps floor keeps K strictly
// positive: the absolute value makes an all-zero head output reachable.
struct SwitchingConfig {
  int n_reg = 8;
  int d_r = 8;
  int d_h = 8;
};

constexpr double kRegimeProbFloor = 1e-8;

// Registers sw.theta1..sw.theta5 and sw.prior_logits. Matrices are uniform in
// +-sqrt(6/(fan_in+fan_out)); logits start at zero.
void init_switching_params(ThetaStore& store, const SwitchingConfig& cfg, RandomStream& rng);

struct SwitchingRefs {
  Var th1, th2, th3, th4, th5, prior_logits;
  SwitchingConfig cfg;
};

// Pulls the bound leaves (from ThetaStore::bind_all) into a refs bundle.
SwitchingRefs bind_switching(const ThetaStore& store, std::span<const Var> leaves,
                             const SwitchingConfig& cfg);

// Single-cache forms (cache is d_r x 1, regime index 0-based).
Var cache_update(Tape& t, const SwitchingRefs& p, int k, Var r_prev);
Var regime_probs(Tape& t, const SwitchingRefs& p, Var r_prev);
Var regime_prior(Tape& t, const SwitchingRefs& p);

// Batched forms over N particles; caches are rows of an (N x d_r) matrix.
Var cache_update_batch(Tape& t, const SwitchingRefs& p, std::span<const int> k, Var r_prev);
Var regime_prob_matrix(Tape& t, const SwitchingRefs& p, Var r_prev);  // (N x n_reg)

// Plain-double forward path (inference; no tape).
struct SwitchingView {
  const double* th1;
  const double* th2;
  const double* th3;
  const double* th4;
  const double* th5;
  const double* prior_logits;
  SwitchingConfig cfg;
};
SwitchingView switching_view(const ThetaStore& store, const SwitchingConfig& cfg);

void plain_cache_update(const SwitchingView& v, int k, const double* r_prev, double* r_out);
void plain_regime_probs(const SwitchingView& v, const double* r, double* out);
void plain_regime_prior(const SwitchingView& v, double* out);

}  // namespace dimmpf
