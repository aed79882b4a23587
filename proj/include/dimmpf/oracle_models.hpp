#pragma once

#include <cmath>

#include "dimmpf/env_sim.hpp"
#include "dimmpf/model.hpp"
#include "dimmpf/regime_models.hpp"

namespace dimmpf {

// Reference filters with the true data-generating models. The switching side
// carries exact sufficient statistics in the particle cache: the previous
// regime (Markov), occurrence counts (Polya), or the full latent sojourn state
// sampled forward per particle (Erlang).
class OracleModelBase : public PlainModel {
 public:
  int n_regimes() const override { return kNumRegimes; }
  void regime_prior(double* out) const override {
    for (int q = 0; q < kNumRegimes; ++q) out[q] = 1.0 / kNumRegimes;
  }
  double sample_prior_state(int k, RandomStream& rng) const override {
    return prior_sample(k, rng.uniform());
  }
  double propagate(double x_anc, int k, RandomStream& rng) const override {
    return TrueModel::dyn_mean(x_anc, k) + std::sqrt(TrueModel::sigma2) * rng.normal();
  }
  double obs_log_density(double y, double x, int k) const override {
    return plain_gaussian_logpdf(y, TrueModel::obs_mean(x, k), std::sqrt(TrueModel::sigma2));
  }
};

class MarkovOracle final : public OracleModelBase {
 public:
  int cache_size() const override { return 1; }
  void cache_init(int k0, double* cache, RandomStream&) const override {
    cache[0] = k0;
  }
  void regime_probs(const double* cache, int, double* out) const override {
    MarkovMatrix::row(static_cast<int>(cache[0]), out);
  }
  void cache_transition(const double* anc, int k_new, int, double* out) const override {
    (void)anc;
    out[0] = k_new;
  }
};

class PolyaOracle final : public OracleModelBase {
 public:
  int cache_size() const override { return kNumRegimes; }
  void cache_init(int k0, double* cache, RandomStream&) const override {
    for (int q = 0; q < kNumRegimes; ++q) cache[q] = 0.0;
    cache[k0] = 1.0;
  }
  void regime_probs(const double* cache, int t, double* out) const override {
    for (int q = 0; q < kNumRegimes; ++q) out[q] = (1.0 + cache[q]) / (kNumRegimes + t);
  }
  void cache_transition(const double* anc, int k_new, int, double* out) const override {
    for (int q = 0; q < kNumRegimes; ++q) out[q] = anc[q];
    out[k_new] += 1.0;
  }
};

// cache layout: [k_prev, l, m, n, alpha, m_prev, counts x 8]
class ErlangOracle final : public OracleModelBase {
 public:
  int cache_size() const override { return 6 + kNumRegimes; }
  void cache_init(int k0, double* c, RandomStream& rng) const override {
    for (int i = 0; i < cache_size(); ++i) c[i] = 0.0;
    c[0] = k0;
    c[5] = rng.bernoulli(0.01) ? 1.0 : 0.0;  // m_0 enters the s=0 count term
  }
  void cache_presample(double* c, int, RandomStream& rng) const override {
    c[2] = rng.bernoulli(0.01) ? 1.0 : 0.0;
    c[3] = rng.bernoulli(0.2) ? 1.0 : 0.0;
    c[4] = (c[3] != 0.0 && c[1] == 0.0) ? 1.0 : 0.0;
  }
  void regime_probs(const double* c, int, double* out) const override {
    erlang_conditional_law(static_cast<int>(c[0]), c[2] != 0.0, c[4] != 0.0, out);
  }
  void cache_transition(const double* a, int k_new, int, double* out) const override {
    for (int i = 0; i < cache_size(); ++i) out[i] = a[i];
    const int k_prev = static_cast<int>(a[0]);
    if (k_new != k_prev || a[5] != 0.0) out[6 + k_prev] += 1.0;
    if (a[3] != 0.0) out[1] = (a[1] > 0.0) ? a[1] - 1.0 : out[6 + k_new];
    out[5] = a[2];
    out[0] = k_new;
  }
};

}  // namespace dimmpf
