#include "dimmpf/toy_model.hpp"

#include <cmath>
#include <stdexcept>

namespace dimmpf {

ToyModel make_default_toy() {
  ToyModel toy;
  toy.grid_x = {-2.0, -1.0, 0.0, 1.0, 2.0};
  toy.m0 = {0.2, 0.2, 0.2, 0.2, 0.2};

  // regime 0 drifts left, regime 1 drifts right; rows normalized
  toy.m.assign(static_cast<size_t>(toy.n_reg) * toy.grid * toy.grid, 0.0);
  for (int i = 0; i < toy.grid; ++i) {
    const int l = i > 0 ? i - 1 : 0;
    const int r = i < toy.grid - 1 ? i + 1 : toy.grid - 1;
    std::vector<double> row0(toy.grid, 0.05), row1(toy.grid, 0.05);
    row0[l] += 0.6;
    row0[i] += 0.2;
    row1[r] += 0.6;
    row1[i] += 0.2;
    double s0 = 0, s1 = 0;
    for (double v : row0) s0 += v;
    for (double v : row1) s1 += v;
    for (int j = 0; j < toy.grid; ++j) {
      toy.m[(0ull * toy.grid + i) * toy.grid + j] = row0[j] / s0;
      toy.m[(1ull * toy.grid + i) * toy.grid + j] = row1[j] / s1;
    }
  }

  Tensor k0(toy.n_reg, 1);
  k0.d = {0.6, 0.4};
  Tensor k(toy.n_reg, toy.n_reg);
  k.d = {0.8, 0.2, 0.3, 0.7};
  Tensor g(toy.n_reg * toy.grid, toy.n_obs);
  // observation table keyed by (regime, state), informative about both
  RandomStream rng(20240517);
  for (int q = 0; q < toy.n_reg; ++q)
    for (int i = 0; i < toy.grid; ++i)
      for (int o = 0; o < toy.n_obs; ++o) {
        const double peak = (q == 0 ? i : toy.grid - 1 - i) * (toy.n_obs - 1.0) / (toy.grid - 1.0);
        const double d = o - peak;
        g.at(q * toy.grid + i, o) = std::exp(-0.8 * d * d) + 0.1 + 0.2 * rng.uniform();
      }
  toy.theta.add("toy.k0", std::move(k0));
  toy.theta.add("toy.k", std::move(k));
  toy.theta.add("toy.g", std::move(g));
  return toy;
}

void TapeToyModel::bind(Tape& t) {
  auto leaves = toy_.theta.bind_all(t);
  k0_ = leaves[toy_.theta.find("toy.k0")];
  ktab_ = leaves[toy_.theta.find("toy.k")];
  gtab_ = leaves[toy_.theta.find("toy.g")];
  knorm_ = Var{};
}

Var TapeToyModel::regime_prior(Tape& t) { return t.div(k0_, t.sum(k0_)); }

Var TapeToyModel::knorm(Tape& t) {
  if (!knorm_.valid()) knorm_ = t.div(ktab_, t.sum_cols(ktab_));
  return knorm_;
}

Var TapeToyModel::cache_init(Tape& t, std::span<const int> k0) {
  Tensor onehot(static_cast<int>(k0.size()), toy_.n_reg);
  for (size_t i = 0; i < k0.size(); ++i) onehot.at(static_cast<int>(i), k0[i]) = 1.0;
  return t.constant(std::move(onehot));
}

Var TapeToyModel::cache_update(Tape& t, std::span<const int> k, Var) {
  return cache_init(t, k);
}

Var TapeToyModel::regime_prob_matrix(Tape& t, Var, std::span<const int> k_prev) {
  return t.gather_rows(knorm(t), std::vector<int>(k_prev.begin(), k_prev.end()));
}

Var TapeToyModel::sample_prior_states(Tape& t, std::span<const int> k, RandomStream& rng,
                                      std::vector<int>& tags) {
  const int n = static_cast<int>(k.size());
  tags.resize(n);
  Tensor x(n, 1);
  for (int i = 0; i < n; ++i) {
    tags[i] = rng.categorical(toy_.m0.data(), toy_.grid, 1.0);
    x.d[i] = toy_.grid_x[tags[i]];
  }
  return t.constant(std::move(x));
}

Var TapeToyModel::propagate(Tape& t, Var, std::span<const int> k, RandomStream& rng,
                            std::vector<int>& tags) {
  const int n = static_cast<int>(k.size());
  Tensor x(n, 1);
  for (int i = 0; i < n; ++i) {
    const double* row = &toy_.m[(static_cast<size_t>(k[i]) * toy_.grid + tags[i]) * toy_.grid];
    tags[i] = rng.categorical(row, toy_.grid, 1.0);
    x.d[i] = toy_.grid_x[tags[i]];
  }
  return t.constant(std::move(x));
}

Var TapeToyModel::obs_log_density(Tape& t, Var, std::span<const int> k,
                                  std::span<const int> tags, double y) {
  const int n = static_cast<int>(k.size());
  const int yi = static_cast<int>(y);
  std::vector<int> rows(n), cols(n, yi);
  for (int i = 0; i < n; ++i) rows[i] = k[i] * toy_.grid + tags[i];
  return t.log(t.gather2d(gtab_, std::move(rows), std::move(cols)));
}

void TapeToyModel::pairwise_dyn_logdensity(const Tensor& x_new, std::span<const int> tags_new,
                                           const Tensor&, std::span<const int> tags_prev,
                                           std::span<const int> k, Tensor& out) {
  const int n = x_new.rows;
  (void)tags_new;
  for (int i = 0; i < n; ++i) {
    double* row = out.data() + static_cast<size_t>(i) * out.cols;
    for (int j = 0; j < out.cols; ++j) {
      const double p = toy_.m_at(k[i], tags_prev[j], tags_new[i]);
      row[j] = p > 0.0 ? std::log(p) : -745.0;
    }
  }
}

Var TapeToyModel::joint_log_density_by_regime(Tape& t, double x_t, double x_prev, double y_t,
                                              bool is_t0) {
  const int xi = static_cast<int>(x_t), yi = static_cast<int>(y_t);
  std::vector<int> rows(toy_.n_reg), cols(toy_.n_reg, yi);
  for (int q = 0; q < toy_.n_reg; ++q) rows[q] = q * toy_.grid + xi;
  Var lg = t.log(t.gather2d(gtab_, std::move(rows), std::move(cols)));
  Tensor dyn(toy_.n_reg, 1);
  if (is_t0) {
    for (int q = 0; q < toy_.n_reg; ++q) dyn.d[q] = std::log(toy_.m0[xi]);
  } else {
    const int xp = static_cast<int>(x_prev);
    for (int q = 0; q < toy_.n_reg; ++q) dyn.d[q] = std::log(toy_.m_at(q, xp, xi));
  }
  return t.add(lg, t.constant(std::move(dyn)));
}

ToyExact enumerate_toy(Tape& t, TapeToyModel& model, const ToyModel& toy,
                       std::span<const double> obs, bool reverse_order) {
  const int T = static_cast<int>(obs.size()) - 1;
  const double paths = std::pow(double(toy.n_reg) * toy.grid, T + 1);
  if (paths > 1e6) throw std::invalid_argument("toy enumeration: state space too large");

  model.bind(t);
  Var prior = model.regime_prior(t);
  Var kn = model.knorm(t);
  Var gt = model.gtab();

  std::vector<Var> terms, weighted;
  std::vector<int> kpath(T + 1), xpath(T + 1);
  const long long total = static_cast<long long>(paths);
  for (long long it = 0; it < total; ++it) {
    long long rem = reverse_order ? total - 1 - it : it;
    for (int d = 0; d <= T; ++d) {
      kpath[d] = static_cast<int>(rem % toy.n_reg);
      rem /= toy.n_reg;
      xpath[d] = static_cast<int>(rem % toy.grid);
      rem /= toy.grid;
    }
    Var p = t.gather_rows(prior, {kpath[0]});
    p = t.mul(p, t.constant(toy.m0[xpath[0]]));
    p = t.mul(p, t.gather2d(gt, {kpath[0] * toy.grid + xpath[0]}, {static_cast<int>(obs[0])}));
    for (int step = 1; step <= T; ++step) {
      p = t.mul(p, t.gather2d(kn, {kpath[step - 1]}, {kpath[step]}));
      p = t.mul(p, t.constant(toy.m_at(kpath[step], xpath[step - 1], xpath[step])));
      p = t.mul(p, t.gather2d(gt, {kpath[step] * toy.grid + xpath[step]},
                              {static_cast<int>(obs[step])}));
    }
    terms.push_back(p);
    weighted.push_back(t.mul(p, t.constant(toy.grid_x[xpath[T]])));
  }

  Var z = t.add_n(terms);
  ToyExact out;
  out.posterior_mean_xT = t.div(t.add_n(weighted), z);
  out.log_marginal = t.log(z);
  return out;
}

Var enumerate_toy_joint(Tape& t, TapeToyModel& model, const ToyModel& toy,
                        std::span<const double> truth_x, std::span<const double> obs) {
  const int T = static_cast<int>(obs.size()) - 1;
  const double paths = std::pow(double(toy.n_reg), T + 1);
  if (paths > 1e6) throw std::invalid_argument("toy enumeration: state space too large");
  model.bind(t);
  Var prior = model.regime_prior(t);
  Var kn = model.knorm(t);
  Var gt = model.gtab();

  std::vector<Var> terms;
  std::vector<int> kpath(T + 1);
  const long long total = static_cast<long long>(paths);
  for (long long it = 0; it < total; ++it) {
    long long rem = it;
    for (int d = 0; d <= T; ++d) {
      kpath[d] = static_cast<int>(rem % toy.n_reg);
      rem /= toy.n_reg;
    }
    const int x0 = static_cast<int>(truth_x[0]);
    Var p = t.gather_rows(prior, {kpath[0]});
    p = t.mul(p, t.constant(toy.m0[x0]));
    p = t.mul(p, t.gather2d(gt, {kpath[0] * toy.grid + x0}, {static_cast<int>(obs[0])}));
    for (int step = 1; step <= T; ++step) {
      const int xi = static_cast<int>(truth_x[step]);
      const int xp = static_cast<int>(truth_x[step - 1]);
      p = t.mul(p, t.gather2d(kn, {kpath[step - 1]}, {kpath[step]}));
      p = t.mul(p, t.constant(toy.m_at(kpath[step], xp, xi)));
      p = t.mul(p, t.gather2d(gt, {kpath[step] * toy.grid + xi}, {static_cast<int>(obs[step])}));
    }
    terms.push_back(p);
  }
  return t.log(t.add_n(terms));
}

}  // namespace dimmpf
