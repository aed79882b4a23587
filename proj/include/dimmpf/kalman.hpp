#pragma once

#include <span>
#include <vector>

#include "dimmpf/model.hpp"
#include "dimmpf/regime_models.hpp"

namespace dimmpf {

// Single-regime linear-Gaussian model: x0 ~ N(m0, p0), x' ~ N(a x + b, q),
// y ~ N(c x + d, r). Variances are p0 / q / r.
struct LinearGaussianParams {
  double m0 = 0.0, p0 = 1.0;
  double a = 0.9, b = 0.0, q = 0.5;
  double c = 1.0, d = 0.0, r = 0.5;
};

// Exact marginal log-likelihood log p(y_0:T) by the standard Gaussian
// filtering recursion. Throws on nonpositive variances.
double kalman_log_likelihood(const LinearGaussianParams& p, std::span<const double> y);

std::vector<double> simulate_linear_gaussian(const LinearGaussianParams& p, int T,
                                             RandomStream& rng);

// Plain-model hooks so the generic filter runs this model as a bootstrap
// filter (single regime: the regime tilt is trivial).
class LinearGaussianModel final : public PlainModel {
 public:
  explicit LinearGaussianModel(const LinearGaussianParams& p);

  int n_regimes() const override { return 1; }
  int cache_size() const override { return 1; }
  void regime_prior(double* out) const override { out[0] = 1.0; }
  double sample_prior_state(int, RandomStream& rng) const override;
  void cache_init(int, double* cache, RandomStream&) const override { cache[0] = 0.0; }
  void regime_probs(const double*, int, double* out) const override { out[0] = 1.0; }
  void cache_transition(const double*, int, int, double* out) const override { out[0] = 0.0; }
  double propagate(double x_anc, int, RandomStream& rng) const override;
  double obs_log_density(double y, double x, int) const override;

 private:
  LinearGaussianParams p_;
  double sd0_, sdq_, sdr_;
};

}  // namespace dimmpf
