#pragma once

// Central finite-difference oracle for gradient tests. Lives in test code and
// never calls into the tape's backward rules.

#include <cmath>
#include <functional>
#include <span>
#include <vector>

namespace testutil {

constexpr double kFdStep = 1e-4;

// f evaluates a scalar from a flat parameter vector (rebuilding whatever
// computation it wants); returns d f / d x[i] by central differences.
inline double fd_partial(const std::function<double(std::span<const double>)>& f,
                         std::vector<double> x, size_t i, double h = kFdStep) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double fp = f(x);
  x[i] = x0 - h;
  const double fm = f(x);
  return (fp - fm) / (2.0 * h);
}

inline bool close_rel(double got, double want, double rtol, double atol = 0.0) {
  return std::fabs(got - want) <= rtol * std::max(1.0, std::fabs(want)) + atol;
}

// max over coordinates of |ad - fd| / max(1, |fd|)
inline double max_rel_grad_err(const std::function<double(std::span<const double>)>& f,
                               std::span<const double> x, std::span<const double> ad_grad,
                               double h = kFdStep) {
  std::vector<double> xv(x.begin(), x.end());
  double worst = 0.0;
  for (size_t i = 0; i < xv.size(); ++i) {
    const double fd = fd_partial(f, xv, i, h);
    const double err = std::fabs(ad_grad[i] - fd) / std::max(1.0, std::fabs(fd));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace testutil
