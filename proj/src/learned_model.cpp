#include "dimmpf/learned_model.hpp"

#include <cmath>

namespace dimmpf {

ThetaStore init_learned_store(const LearnedModelConfig& cfg, uint64_t seed) {
  ThetaStore store;
  RandomStream rng = RandomStream::derived(seed, "init");
  init_switching_params(store, cfg.sw, rng);
  init_regime_params(store, cfg.nets, rng);
  return store;
}

void TapeLearnedModel::bind(Tape& t) {
  auto leaves = store_.bind_all(t);
  sw_ = bind_switching(store_, leaves, cfg_.sw);
  nets_ = bind_regime_models(store_, leaves, cfg_.nets);
  net_view_ = regime_model_view(store_, cfg_.nets);
}

Var TapeLearnedModel::regime_prior(Tape& t) { return dimmpf::regime_prior(t, sw_); }

Var TapeLearnedModel::cache_init(Tape& t, std::span<const int> k0) {
  Var zero = t.constant(Tensor(static_cast<int>(k0.size()), cfg_.sw.d_r));
  return cache_update_batch(t, sw_, k0, zero);
}

Var TapeLearnedModel::cache_update(Tape& t, std::span<const int> k, Var r_sel) {
  return cache_update_batch(t, sw_, k, r_sel);
}

Var TapeLearnedModel::regime_prob_matrix(Tape& t, Var r_prev, std::span<const int>) {
  return dimmpf::regime_prob_matrix(t, sw_, r_prev);
}

Var TapeLearnedModel::sample_prior_states(Tape& t, std::span<const int> k, RandomStream& rng,
                                          std::vector<int>& tags) {
  const int n = static_cast<int>(k.size());
  tags.assign(n, 0);
  Tensor x0(n, 1);
  for (int i = 0; i < n; ++i) x0.d[i] = prior_sample(k[i], rng.uniform());
  return t.constant(std::move(x0));
}

Var TapeLearnedModel::propagate(Tape& t, Var x_anc, std::span<const int> k, RandomStream& rng,
                                std::vector<int>& tags) {
  const int n = static_cast<int>(k.size());
  const int stratum = n / cfg_.sw.n_reg;
  tags.assign(n, 0);
  // particles are regime-sorted in contiguous blocks; run each regime's net
  // on its block and stitch the columns back together
  std::vector<Var> means;
  means.reserve(cfg_.sw.n_reg);
  for (int q = 0; q < cfg_.sw.n_reg; ++q) {
    std::vector<int> rows(stratum);
    for (int i = 0; i < stratum; ++i) rows[i] = q * stratum + i;
    Var xq = t.gather_rows(x_anc, std::move(rows));
    means.push_back(net_mean_batch(t, nets_.dyn[q], xq));
  }
  Var mean = t.concat_rows(means);
  Tensor noise(n, 1);
  for (int i = 0; i < n; ++i) noise.d[i] = rng.normal();
  return t.reparam(mean, t.exp(nets_.dyn_log_scale), std::move(noise));
}

Var TapeLearnedModel::obs_log_density(Tape& t, Var x, std::span<const int> k,
                                      std::span<const int>, double y) {
  const int n = static_cast<int>(k.size());
  const int stratum = n / cfg_.sw.n_reg;
  std::vector<Var> parts;
  parts.reserve(cfg_.sw.n_reg);
  for (int q = 0; q < cfg_.sw.n_reg; ++q) {
    std::vector<int> rows(stratum);
    for (int i = 0; i < stratum; ++i) rows[i] = q * stratum + i;
    Var xq = t.gather_rows(x, std::move(rows));
    parts.push_back(net_mean_batch(t, nets_.obs[q], xq));
  }
  // one density chain over the stitched means: the scale is shared per family
  return gaussian_logpdf(t, t.concat_rows(parts), nets_.obs_log_scale, y);
}

void TapeLearnedModel::pairwise_dyn_logdensity(const Tensor& x_new, std::span<const int>,
                                               const Tensor& x_prev, std::span<const int>,
                                               std::span<const int> k, Tensor& out) {
  const int n = x_new.rows, m = x_prev.rows;
  const int n_reg = cfg_.sw.n_reg;
  // mean[q][j] = dyn net of regime q at ancestor state j, shared by all
  // particles assigned to regime q
  std::vector<double> mean(static_cast<size_t>(n_reg) * m);
  for (int q = 0; q < n_reg; ++q)
    net_eval_batch(net_view_.dyn[q], x_prev.data(), mean.data() + static_cast<size_t>(q) * m, m);

  const double scale = net_view_.dyn_scale;
  const double c = -kHalfLog2Pi - std::log(scale);
  const double inv2s2 = 0.5 / (scale * scale);
  for (int i = 0; i < n; ++i) {
    const double xi = x_new.d[i];
    const double* mrow = mean.data() + static_cast<size_t>(k[i]) * m;
    double* orow = out.data() + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double d = xi - mrow[j];
      orow[j] = c - d * d * inv2s2;
    }
  }
}

Var TapeLearnedModel::joint_log_density_by_regime(Tape& t, double x_t, double x_prev,
                                                  double y_t, bool is_t0) {
  std::vector<Var> parts;
  parts.reserve(cfg_.sw.n_reg);
  for (int q = 0; q < cfg_.sw.n_reg; ++q) {
    Var obs_mean = net_mean_batch(t, nets_.obs[q], t.constant(Tensor::scalar(x_t)));
    Var lg = gaussian_logpdf(t, obs_mean, nets_.obs_log_scale, y_t);
    if (!is_t0) {
      Var dyn_mean = net_mean_batch(t, nets_.dyn[q], t.constant(Tensor::scalar(x_prev)));
      lg = t.add(lg, gaussian_logpdf(t, dyn_mean, nets_.dyn_log_scale, x_t));
    }
    parts.push_back(lg);
  }
  return t.concat_rows(parts);
}

void PlainLearnedModel::cache_init(int k0, double* cache, RandomStream&) const {
  std::vector<double> zero(static_cast<size_t>(sw_.cfg.d_r), 0.0);
  plain_cache_update(sw_, k0, zero.data(), cache);
}

}  // namespace dimmpf
