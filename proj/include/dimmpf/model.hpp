#pragma once

#include <span>
#include <vector>

#include "dimmpf/rng.hpp"
#include "dimmpf/tape.hpp"

namespace dimmpf {

// Model hooks for the differentiable filter. All hooks are batched across the
// N particles; regime indices are 0-based. `tags` is opaque per-particle state
// a model may thread through propagation (the tabulated toy stores grid
// indices there; continuous models ignore it).
class TapeModel {
 public:
  virtual ~TapeModel() = default;

  virtual int n_regimes() const = 0;

  // Creates parameter leaves on the tape. Called once per tape before any
  // other hook.
  virtual void bind(Tape& t) = 0;

  virtual Var regime_prior(Tape& t) = 0;                               // (n_reg x 1)
  virtual Var cache_init(Tape& t, std::span<const int> k0) = 0;        // (N x d)
  virtual Var cache_update(Tape& t, std::span<const int> k, Var r_sel) = 0;
  virtual Var regime_prob_matrix(Tape& t, Var r_prev, std::span<const int> k_prev) = 0;

  virtual Var sample_prior_states(Tape& t, std::span<const int> k, RandomStream& rng,
                                  std::vector<int>& tags) = 0;         // (N x 1)
  virtual Var propagate(Tape& t, Var x_anc, std::span<const int> k, RandomStream& rng,
                        std::vector<int>& tags) = 0;                   // (N x 1)
  virtual Var obs_log_density(Tape& t, Var x, std::span<const int> k,
                              std::span<const int> tags, double y) = 0;  // (N x 1)

  // Detached pairwise kernel for the Rao-Blackwellised mixture: fills
  // out[n][m] = log M(x_new[n] | x_prev[m], k[n]) as plain values.
  virtual void pairwise_dyn_logdensity(const Tensor& x_new, std::span<const int> tags_new,
                                       const Tensor& x_prev, std::span<const int> tags_prev,
                                       std::span<const int> k, Tensor& out) = 0;

  // Per-regime joint factors for the likelihood-mode filter: an (n_reg x 1)
  // Var of log[G(y_t | x_t, q) * M(x_t | x_prev, q)]; at t = 0 the dynamic
  // factor is the (constant) initial density and is omitted.
  virtual Var joint_log_density_by_regime(Tape& t, double x_t, double x_prev, double y_t,
                                          bool is_t0) = 0;
};

// Plain-double model hooks for the non-differentiable filter (inference and
// oracle runs). The regime cache is a fixed-size block of doubles so oracle
// models can carry latent augmentation (Erlang countdown and counts) in it.
class PlainModel {
 public:
  virtual ~PlainModel() = default;

  virtual int n_regimes() const = 0;
  virtual int cache_size() const = 0;

  virtual void regime_prior(double* out) const = 0;
  virtual double sample_prior_state(int k, RandomStream& rng) const = 0;
  virtual void cache_init(int k0, double* cache, RandomStream& rng) const = 0;

  // Called once per particle at the start of each step, before the transition
  // law is read; models with stochastic latent state sample it here.
  virtual void cache_presample(double* cache, int t, RandomStream& rng) const {}

  virtual void regime_probs(const double* cache, int t, double* out) const = 0;
  virtual void cache_transition(const double* anc_cache, int k_new, int t,
                                double* out) const = 0;

  virtual double propagate(double x_anc, int k, RandomStream& rng) const = 0;
  virtual double obs_log_density(double y, double x, int k) const = 0;
};

}  // namespace dimmpf
