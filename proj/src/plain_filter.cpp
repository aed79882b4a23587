#include "dimmpf/plain_filter.hpp"

#include <cmath>

#include "dimmpf/resample.hpp"
#include "dimmpf/tape_filter.hpp"

namespace dimmpf {

double PlainFilterOutput::log_marginal() const {
  double z = 0.0;
  for (double v : log_wsum) z += v;
  return z - static_cast<double>(log_wsum.size()) * std::log(double(final_n_));
}

double PlainFilterOutput::mse(std::span<const double> truth) const {
  double acc = 0.0;
  for (size_t t = 0; t < mean.size(); ++t) {
    const double d = mean[t] - truth[t];
    acc += d * d;
  }
  return acc / static_cast<double>(mean.size());
}

PlainFilterOutput run_plain_filter(const PlainModel& model, std::span<const double> obs,
                                   const FilterConfig& cfg, RandomStream& rng,
                                   bool keep_final) {
  const int n = cfg.particles;
  const int n_reg = model.n_regimes();
  const int cd = model.cache_size();
  const int T = static_cast<int>(obs.size()) - 1;
  std::vector<int> k = block_regime_assignment(n, n_reg);

  std::vector<double> x(n), logg(n), w(n), wbar(n);
  std::vector<double> caches(static_cast<size_t>(n) * cd), caches_next(caches.size());
  std::vector<double> prior(n_reg);

  PlainFilterOutput out;
  out.set_n(n);

  // t = 0: prior states first, caches second (the tape filter's draw order)
  for (int i = 0; i < n; ++i) x[i] = model.sample_prior_state(k[i], rng);
  for (int i = 0; i < n; ++i) model.cache_init(k[i], &caches[static_cast<size_t>(i) * cd], rng);
  model.regime_prior(prior.data());

  auto finish_step = [&](int step, double shift) {
    double sum = 0.0;
    for (int i = 0; i < n; ++i) sum += w[i];
    if (!(sum > 0.0) || !std::isfinite(sum)) throw FilterFailure("nonfinite weight sum", step);
    double m = 0.0;
    for (int i = 0; i < n; ++i) {
      wbar[i] = w[i] / sum;
      m += wbar[i] * x[i];
    }
    out.mean.push_back(m);
    const double cal = step == 0 ? 0.0 : 2.0 * std::log(double(n_reg));
    out.log_wsum.push_back(std::log(sum) + shift + cal);
  };

  double shift = -1e300;
  for (int i = 0; i < n; ++i) {
    logg[i] = model.obs_log_density(obs[0], x[i], k[i]);
    shift = std::max(shift, logg[i]);
  }
  for (int i = 0; i < n; ++i) w[i] = std::exp(logg[i] - shift) * n_reg * prior[k[i]];
  finish_step(0, shift);

  Tensor coupling(n, n_reg);
  std::vector<double> col_mass(n_reg), krow(n_reg);
  std::vector<int> ancestors;
  std::vector<double> x_prev(n);

  for (int step = 1; step <= T; ++step) {
    for (int i = 0; i < n; ++i)
      model.cache_presample(&caches[static_cast<size_t>(i) * cd], step, rng);

    std::fill(col_mass.begin(), col_mass.end(), 0.0);
    for (int i = 0; i < n; ++i) {
      model.regime_probs(&caches[static_cast<size_t>(i) * cd], step, krow.data());
      for (int q = 0; q < n_reg; ++q) {
        const double c = wbar[i] * krow[q];
        coupling.at(i, q) = c;
        col_mass[q] += c;
      }
    }

    sample_ancestors(coupling, col_mass, cfg.resampler, n_reg, step, rng, ancestors);

    for (int i = 0; i < n; ++i)
      model.cache_transition(&caches[static_cast<size_t>(ancestors[i]) * cd], k[i], step,
                             &caches_next[static_cast<size_t>(i) * cd]);
    caches.swap(caches_next);

    x_prev = x;
    for (int i = 0; i < n; ++i) x[i] = model.propagate(x_prev[ancestors[i]], k[i], rng);

    shift = -1e300;
    for (int i = 0; i < n; ++i) {
      logg[i] = model.obs_log_density(obs[step], x[i], k[i]);
      shift = std::max(shift, logg[i]);
    }
    for (int i = 0; i < n; ++i) w[i] = std::exp(logg[i] - shift) * col_mass[k[i]] / n_reg;
    finish_step(step, shift);
  }

  if (keep_final) {
    out.final_x = x;
    out.final_k = k;
    out.final_wbar = wbar;
  }
  return out;
}

}  // namespace dimmpf
