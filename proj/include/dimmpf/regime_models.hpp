#pragma once

#include <span>
#include <string>
#include <vector>

#include "dimmpf/rng.hpp"
#include "dimmpf/tape.hpp"
#include "dimmpf/theta_store.hpp"

namespace dimmpf {

// Per-regime dynamic and observation models: one independent 1 -> h -> h -> 1
// fully connected network (ReLU hidden, linear output) per regime and family,
// plus one shared log-scale per family. Densities are Gaussian around the
// network mean.
struct RegimeNetConfig {
  int n_reg = 8;
  int hidden = 11;
};

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5*log(2*pi)

// Registers dyn.k{i}.* / obs.k{i}.* and dyn.log_scale / obs.log_scale.
// Log-scales start at log(sqrt(0.1)).
void init_regime_params(ThetaStore& store, const RegimeNetConfig& cfg, RandomStream& rng);

struct NetRefs {
  Var w1, b1, w2, b2, w3, b3;
};

struct RegimeModelRefs {
  std::vector<NetRefs> dyn;  // one per regime
  std::vector<NetRefs> obs;
  Var dyn_log_scale, obs_log_scale;
  RegimeNetConfig cfg;
};

RegimeModelRefs bind_regime_models(const ThetaStore& store, std::span<const Var> leaves,
                                   const RegimeNetConfig& cfg);

// Batched network mean over a column of inputs (S x 1) -> (S x 1).
Var net_mean_batch(Tape& t, const NetRefs& n, Var x);

// log N(value; mean, exp(log_scale)) elementwise; value is a constant.
Var gaussian_logpdf(Tape& t, Var mean, Var log_scale, const Tensor& value);
Var gaussian_logpdf(Tape& t, Var mean, Var log_scale, double value);

// Single-input convenience forms used by tests and the likelihood filter.
Var dyn_sample(Tape& t, const RegimeModelRefs& m, double x_prev, int k, double noise);
Var dyn_logpdf(Tape& t, const RegimeModelRefs& m, double x, double x_prev, int k);
Var obs_logpdf(Tape& t, const RegimeModelRefs& m, double y, double x, int k);

// Known initial law: x0 ~ U(-0.5, 0.5), independent of the regime.
inline double prior_sample(int /*k*/, double u) { return u - 0.5; }

// Plain-double forward path.
struct NetView {
  const double *w1, *b1, *w2, *b2, *w3, *b3;
  int h;
};
struct RegimeModelView {
  std::vector<NetView> dyn, obs;
  double dyn_scale, obs_scale;  // exp(log_scale)
  RegimeNetConfig cfg;
};
RegimeModelView regime_model_view(const ThetaStore& store, const RegimeNetConfig& cfg);

double net_eval(const NetView& n, double x);
// same network over a batch of scalar inputs, loops arranged to vectorize
void net_eval_batch(const NetView& n, const double* xs, double* out, int count);
double plain_gaussian_logpdf(double value, double mean, double scale);

}  // namespace dimmpf
