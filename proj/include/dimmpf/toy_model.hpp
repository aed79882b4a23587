#pragma once

#include <memory>
#include <vector>

#include "dimmpf/model.hpp"
#include "dimmpf/theta_store.hpp"

namespace dimmpf {

// Fully tabulated two-regime model on a small state grid. Everything the
// gradient flows through (K0, K, G tables) lives in a ThetaStore; the dynamic
// tables are fixed constants so the filter's stop-gradient treatment of the
// pairwise dynamic densities is exact for this model family. Posterior
// expectations and the data likelihood are computable by full path
// enumeration, which is the oracle for the estimator-bias tests.
struct ToyModel {
  int n_reg = 2;
  int grid = 5;
  int n_obs = 3;
  std::vector<double> grid_x;  // grid point values
  std::vector<double> m0;      // initial law over grid (normalized)
  std::vector<double> m;       // m[k][i][j]: transition i -> j under regime k
  ThetaStore theta;            // toy.k0 (n_reg x 1), toy.k (n_reg x n_reg),
                               // toy.g ((n_reg*grid) x n_obs), positive entries

  double m_at(int k, int i, int j) const { return m[(static_cast<size_t>(k) * grid + i) * grid + j]; }
};

// Deterministic toy with regime-dependent drift and informative observations;
// built so the posterior mean genuinely depends on the switching tables.
ToyModel make_default_toy();

class TapeToyModel final : public TapeModel {
 public:
  explicit TapeToyModel(const ToyModel& toy) : toy_(toy) {}

  int n_regimes() const override { return toy_.n_reg; }
  void bind(Tape& t) override;

  Var regime_prior(Tape& t) override;
  Var cache_init(Tape& t, std::span<const int> k0) override;
  Var cache_update(Tape& t, std::span<const int> k, Var r_sel) override;
  Var regime_prob_matrix(Tape& t, Var r_prev, std::span<const int> k_prev) override;
  Var sample_prior_states(Tape& t, std::span<const int> k, RandomStream& rng,
                          std::vector<int>& tags) override;
  Var propagate(Tape& t, Var x_anc, std::span<const int> k, RandomStream& rng,
                std::vector<int>& tags) override;
  Var obs_log_density(Tape& t, Var x, std::span<const int> k, std::span<const int> tags,
                      double y) override;
  void pairwise_dyn_logdensity(const Tensor& x_new, std::span<const int> tags_new,
                               const Tensor& x_prev, std::span<const int> tags_prev,
                               std::span<const int> k, Tensor& out) override;
  Var joint_log_density_by_regime(Tape& t, double x_t, double x_prev, double y_t,
                                  bool is_t0) override;

  Var gtab() const { return gtab_; }
  Var knorm(Tape& t);  // row-normalized transition table, built once per bind

 private:
  const ToyModel& toy_;
  Var k0_, ktab_, gtab_, knorm_;
};

// Exact posterior quantities by path enumeration, differentiable through the
// toy's tables. Refuses state spaces beyond ~1e6 paths.
struct ToyExact {
  Var posterior_mean_xT;  // E[x_T | y_0:T]
  Var log_marginal;       // log p(y_0:T)
};
ToyExact enumerate_toy(Tape& t, TapeToyModel& model, const ToyModel& toy,
                       std::span<const double> obs, bool reverse_order = false);

// Exact log p(x_0:T, y_0:T) by enumeration over regime paths (for the
// likelihood-mode target), with x_0:T a grid-index path.
Var enumerate_toy_joint(Tape& t, TapeToyModel& model, const ToyModel& toy,
                        std::span<const double> truth_x, std::span<const double> obs);

}  // namespace dimmpf
