#include "dimmpf/kalman.hpp"

#include <cmath>
#include <stdexcept>

namespace dimmpf {

double kalman_log_likelihood(const LinearGaussianParams& p, std::span<const double> y) {
  if (!(p.p0 > 0.0) || !(p.q > 0.0) || !(p.r > 0.0))
    throw std::invalid_argument("kalman: variances must be positive");
  double m = p.m0, P = p.p0;
  double ll = 0.0;
  for (size_t t = 0; t < y.size(); ++t) {
    if (t > 0) {
      m = p.a * m + p.b;
      P = p.a * p.a * P + p.q;
    }
    const double s = p.c * p.c * P + p.r;
    ll += plain_gaussian_logpdf(y[t], p.c * m + p.d, std::sqrt(s));
    const double gain = P * p.c / s;
    m += gain * (y[t] - p.c * m - p.d);
    P *= (1.0 - gain * p.c);
  }
  return ll;
}

std::vector<double> simulate_linear_gaussian(const LinearGaussianParams& p, int T,
                                             RandomStream& rng) {
  std::vector<double> y(T + 1);
  double x = p.m0 + std::sqrt(p.p0) * rng.normal();
  y[0] = p.c * x + p.d + std::sqrt(p.r) * rng.normal();
  for (int t = 1; t <= T; ++t) {
    x = p.a * x + p.b + std::sqrt(p.q) * rng.normal();
    y[t] = p.c * x + p.d + std::sqrt(p.r) * rng.normal();
  }
  return y;
}

LinearGaussianModel::LinearGaussianModel(const LinearGaussianParams& p) : p_(p) {
  if (!(p.p0 > 0.0) || !(p.q > 0.0) || !(p.r > 0.0))
    throw std::invalid_argument("linear-gaussian: variances must be positive");
  sd0_ = std::sqrt(p.p0);
  sdq_ = std::sqrt(p.q);
  sdr_ = std::sqrt(p.r);
}

double LinearGaussianModel::sample_prior_state(int, RandomStream& rng) const {
  return p_.m0 + sd0_ * rng.normal();
}

double LinearGaussianModel::propagate(double x_anc, int, RandomStream& rng) const {
  return p_.a * x_anc + p_.b + sdq_ * rng.normal();
}

double LinearGaussianModel::obs_log_density(double y, double x, int) const {
  return plain_gaussian_logpdf(y, p_.c * x + p_.d, sdr_);
}

}  // namespace dimmpf
