#pragma once

#include <memory>

#include "dimmpf/model.hpp"
#include "dimmpf/regime_models.hpp"
#include "dimmpf/switching_net.hpp"
#include "dimmpf/theta_store.hpp"

namespace dimmpf {

struct LearnedModelConfig {
  SwitchingConfig sw;
  RegimeNetConfig nets;
};

// Registers the full learned parameter set (switching dynamic, per-regime
// networks, noise scales) into a fresh store.
ThetaStore init_learned_store(const LearnedModelConfig& cfg, uint64_t seed);

// Differentiable hooks over a ThetaStore. bind() must be called per tape.
class TapeLearnedModel final : public TapeModel {
 public:
  TapeLearnedModel(const ThetaStore& store, const LearnedModelConfig& cfg)
      : store_(store), cfg_(cfg) {}

  int n_regimes() const override { return cfg_.sw.n_reg; }
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

 private:
  const ThetaStore& store_;
  LearnedModelConfig cfg_;
  SwitchingRefs sw_;
  RegimeModelRefs nets_;
  // plain views refreshed at bind() for the detached pairwise kernel
  RegimeModelView net_view_;
};

// Plain-double hooks over the same store (inference path).
class PlainLearnedModel final : public PlainModel {
 public:
  PlainLearnedModel(const ThetaStore& store, const LearnedModelConfig& cfg)
      : sw_(switching_view(store, cfg.sw)), nets_(regime_model_view(store, cfg.nets)) {}

  int n_regimes() const override { return sw_.cfg.n_reg; }
  int cache_size() const override { return sw_.cfg.d_r; }

  void regime_prior(double* out) const override { plain_regime_prior(sw_, out); }
  double sample_prior_state(int k, RandomStream& rng) const override {
    return prior_sample(k, rng.uniform());
  }
  void cache_init(int k0, double* cache, RandomStream& rng) const override;
  void regime_probs(const double* cache, int t, double* out) const override {
    plain_regime_probs(sw_, cache, out);
  }
  void cache_transition(const double* anc_cache, int k_new, int t,
                        double* out) const override {
    plain_cache_update(sw_, k_new, anc_cache, out);
  }
  double propagate(double x_anc, int k, RandomStream& rng) const override {
    return net_eval(nets_.dyn[k], x_anc) + nets_.dyn_scale * rng.normal();
  }
  double obs_log_density(double y, double x, int k) const override {
    return plain_gaussian_logpdf(y, net_eval(nets_.obs[k], x), nets_.obs_scale);
  }

 private:
  SwitchingView sw_;
  RegimeModelView nets_;
};

}  // namespace dimmpf
