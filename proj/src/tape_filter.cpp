#include "dimmpf/tape_filter.hpp"

#include <algorithm>
#include <cmath>

#include "dimmpf/resample.hpp"

namespace dimmpf {

const char* mode_name(EstimatorMode m) {
  switch (m) {
    case EstimatorMode::rao_blackwellised: return "rao-blackwellised";
    case EstimatorMode::naive: return "naive";
    case EstimatorMode::detached: return "detached";
  }
  return "?";
}

EstimatorMode parse_mode(const std::string& s) {
  if (s == "rao-blackwellised" || s == "rb") return EstimatorMode::rao_blackwellised;
  if (s == "naive") return EstimatorMode::naive;
  if (s == "detached") return EstimatorMode::detached;
  throw std::invalid_argument("unknown estimator mode: " + s);
}

const char* resampler_name(ResamplerKind r) {
  return r == ResamplerKind::multinomial ? "multinomial" : "systematic";
}

ResamplerKind parse_resampler(const std::string& s) {
  if (s == "multinomial") return ResamplerKind::multinomial;
  if (s == "systematic") return ResamplerKind::systematic;
  throw std::invalid_argument("unknown resampler: " + s);
}

std::vector<int> block_regime_assignment(int particles, int n_reg) {
  if (particles < n_reg || particles % n_reg != 0)
    throw std::invalid_argument("particle count must be a positive multiple of the regime count");
  std::vector<int> k(particles);
  for (int n = 0; n < particles; ++n)
    k[n] = static_cast<int>(static_cast<long long>(n) * n_reg / particles);
  return k;
}

void sample_ancestors(const Tensor& coupling, std::span<const double> col_mass,
                      ResamplerKind kind, int n_reg, int step, RandomStream& rng,
                      std::vector<int>& out) {
  const int n = coupling.rows;
  const int stratum = n / n_reg;
  out.resize(n);
  for (int q = 0; q < n_reg; ++q)
    if (!(col_mass[q] > 0.0) || !std::isfinite(col_mass[q]))
      throw FilterFailure("zero-mass resampling column", step);

  if (kind == ResamplerKind::multinomial) {
    for (int i = 0; i < n; ++i) {
      const int q = i / stratum;
      double u = rng.uniform() * col_mass[q];
      double acc = 0.0;
      int pick = n - 1;
      for (int m = 0; m < n; ++m) {
        acc += coupling.at(m, q);
        if (u < acc) {
          pick = m;
          break;
        }
      }
      out[i] = pick;
    }
    return;
  }

  // systematic, one uniform per regime stratum
  for (int q = 0; q < n_reg; ++q) {
    const double u = rng.uniform();
    const double scale = col_mass[q] / stratum;
    int m = 0;
    double acc = coupling.at(0, q);
    for (int j = 0; j < stratum; ++j) {
      const double target = (u + j) * scale;
      while (acc <= target && m + 1 < n) {
        ++m;
        acc += coupling.at(m, q);
      }
      out[q * stratum + j] = m;
    }
  }
}

namespace {

double max_of(const Tensor& t) {
  double m = t.d[0];
  for (double v : t.d) m = std::max(m, v);
  return m;
}

struct StepWeights {
  Var w;       // unnormalized (common log-shift removed)
  Var wbar;    // normalized
  Var logsum;  // calibrated log sum of unnormalized weights
};

// Shared weight assembly per Eqs. (10)-(12). `g_shifted` = exp(log factor -
// shift); `mix` = the particle's differentiable mixture term (the K-tilted
// Rao-Blackwellised mixture in state mode, S_{k^n} in likelihood mode); the
// stop-gradient factors enter as plain constants.
StepWeights assemble_weights(Tape& t, EstimatorMode mode, std::span<const int> k, Var g_shifted,
                             Var mix, Var coupling, Var wbar_prev,
                             std::span<const double> col_mass, std::span<const int> ancestors,
                             double shift, int n_reg, int step) {
  const int n = static_cast<int>(k.size());
  Var w;
  switch (mode) {
    case EstimatorMode::rao_blackwellised: {
      const Tensor& mv = mix.val();
      Tensor c(n, 1);
      for (int i = 0; i < n; ++i) {
        const double denom = n_reg * mv.d[i];
        if (!(denom > 0.0) || !std::isfinite(denom))
          throw FilterFailure("degenerate Rao-Blackwellised mixture", step);
        c.d[i] = col_mass[k[i]] / denom;
      }
      w = t.mul(t.mul(mix, g_shifted), t.constant(std::move(c)));
      break;
    }
    case EstimatorMode::naive: {
      std::vector<int> anc(ancestors.begin(), ancestors.end());
      std::vector<int> kv(k.begin(), k.end());
      // coupling = wbar * K, so coupling[a,k]/stopgrad(coupling[a,k]) is the
      // single-sample score ratio of the actual ancestor draw
      Var score = t.gather2d(coupling, std::move(anc), std::move(kv));
      Tensor c(n, 1);
      const Tensor& cv = score.val();
      for (int i = 0; i < n; ++i) {
        if (!(cv.d[i] > 0.0) || !std::isfinite(cv.d[i]))
          throw FilterFailure("degenerate ancestor score", step);
        c.d[i] = col_mass[k[i]] / (n_reg * cv.d[i]);
      }
      w = t.mul(t.mul(score, g_shifted), t.constant(std::move(c)));
      break;
    }
    case EstimatorMode::detached: {
      Tensor c(n, 1);
      for (int i = 0; i < n; ++i) c.d[i] = col_mass[k[i]] / n_reg;
      w = t.mul(g_shifted, t.constant(std::move(c)));
      break;
    }
  }

  const Tensor& wv = w.val();
  double s = 0.0;
  for (double v : wv.d) s += v;
  if (!(s > 0.0) || !std::isfinite(s)) throw FilterFailure("nonfinite weight sum", step);

  StepWeights out;
  out.w = w;
  Var sumw = t.sum(w);
  out.wbar = t.div(w, sumw);
  // +2 log n_reg calibration: see TapeFilterOutput
  out.logsum = t.add(t.log(sumw), t.constant(shift + 2.0 * std::log(double(n_reg))));
  return out;
}

StepWeights initial_weights(Tape& t, TapeModel& model, std::span<const int> k, Var g_shifted,
                            double shift) {
  const int n_reg = model.n_regimes();
  Var prior = model.regime_prior(t);
  std::vector<int> kv(k.begin(), k.end());
  Var prior_n = t.gather_rows(prior, std::move(kv));
  // w0 = N_reg * K0(k0) * G(y0 | x0, k0); reduces to Alg.-2 form for the
  // uniform prior
  Var w = t.mul(t.mul(g_shifted, prior_n), t.constant(double(n_reg)));
  const Tensor& wv = w.val();
  double s = 0.0;
  for (double v : wv.d) s += v;
  if (!(s > 0.0) || !std::isfinite(s)) throw FilterFailure("nonfinite weight sum", 0);
  StepWeights out;
  out.w = w;
  Var sumw = t.sum(w);
  out.wbar = t.div(w, sumw);
  out.logsum = t.add(t.log(sumw), t.constant(shift));
  return out;
}

void keep(TapeFilterOutput& o, bool keep_weights, const StepWeights& sw) {
  o.log_wsum.push_back(sw.logsum);
  if (keep_weights) o.step_weights.push_back(sw.w.val().d);
}

}  // namespace

TapeFilterOutput run_tape_filter(Tape& t, TapeModel& model, std::span<const double> obs,
                                 const FilterConfig& cfg, RandomStream& rng,
                                 bool keep_weights) {
  const int n = cfg.particles;
  const int n_reg = model.n_regimes();
  const int T = static_cast<int>(obs.size()) - 1;
  std::vector<int> k = block_regime_assignment(n, n_reg);

  model.bind(t);
  TapeFilterOutput out;

  std::vector<int> tags;
  Var x = model.sample_prior_states(t, k, rng, tags);
  Var caches = model.cache_init(t, k);

  Var logG = model.obs_log_density(t, x, k, tags, obs[0]);
  double shift = max_of(logG.val());
  Var gs = t.exp(t.sub(logG, t.constant(shift)));
  StepWeights sw = initial_weights(t, model, k, gs, shift);
  keep(out, keep_weights, sw);
  out.mean.push_back(t.sum(t.mul(sw.wbar, x)));

  std::vector<int> ancestors;
  Tensor logM(n, n);
  for (int step = 1; step <= T; ++step) {
    Var K = model.regime_prob_matrix(t, caches, k);
    Var coupling = t.mul(K, sw.wbar);  // (N x Q) * (N x 1) column broadcast
    Var mix_cols = t.sum_rows(coupling);  // (Q x 1)
    const Tensor col_mass = mix_cols.val();

    sample_ancestors(coupling.val(), col_mass.d, cfg.resampler, n_reg, step, rng, ancestors);

    Var x_anc = t.gather_rows(x, ancestors);
    Var r_anc = t.gather_rows(caches, ancestors);
    std::vector<int> anc_tags(n);
    for (int i = 0; i < n; ++i) anc_tags[i] = tags.empty() ? 0 : tags[ancestors[i]];

    const Tensor x_prev_vals = x.val();
    std::vector<int> tags_prev = tags;
    tags = anc_tags;
    Var x_new = model.propagate(t, x_anc, k, rng, tags);
    Var caches_new = model.cache_update(t, k, r_anc);

    Var logG_t = model.obs_log_density(t, x_new, k, tags, obs[step]);
    shift = max_of(logG_t.val());
    Var gs_t = t.exp(t.sub(logG_t, t.constant(shift)));

    Var mix;
    if (cfg.mode == EstimatorMode::rao_blackwellised) {
      // detached pairwise kernel, row-shifted before exponentiation
      model.pairwise_dyn_logdensity(x_new.val(), tags, x_prev_vals, tags_prev, k, logM);
      const int stratum = n / n_reg;
      std::vector<Var> blocks;
      blocks.reserve(n_reg);
      for (int q = 0; q < n_reg; ++q) {
        Tensor mhat(stratum, n);
        for (int i = 0; i < stratum; ++i) {
          const double* row = logM.data() + static_cast<size_t>(q * stratum + i) * n;
          double m = row[0];
          for (int j = 1; j < n; ++j) m = std::max(m, row[j]);
          double* o = mhat.data() + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) o[j] = std::exp(row[j] - m);
        }
        blocks.push_back(t.matvec(t.constant(std::move(mhat)), t.slice_col(coupling, q)));
      }
      mix = t.concat_rows(blocks);
    } else if (cfg.mode == EstimatorMode::naive) {
      mix = coupling;  // rows picked inside assemble_weights
    }

    StepWeights sw_t = assemble_weights(t, cfg.mode, k, gs_t, mix, coupling, sw.wbar,
                                        col_mass.d, ancestors, shift, n_reg, step);
    x = x_new;
    caches = caches_new;
    sw = sw_t;
    keep(out, keep_weights, sw);
    out.mean.push_back(t.sum(t.mul(sw.wbar, x)));
  }
  return out;
}

TapeFilterOutput run_tape_likelihood_filter(Tape& t, TapeModel& model,
                                            std::span<const double> truth_x,
                                            std::span<const double> obs,
                                            const FilterConfig& cfg, RandomStream& rng,
                                            bool keep_weights) {
  const int n = cfg.particles;
  const int n_reg = model.n_regimes();
  const int T = static_cast<int>(obs.size()) - 1;
  std::vector<int> k = block_regime_assignment(n, n_reg);
  std::vector<int> kv(k.begin(), k.end());

  model.bind(t);
  TapeFilterOutput out;

  Var caches = model.cache_init(t, k);

  Var logJ = model.joint_log_density_by_regime(t, truth_x[0], 0.0, obs[0], true);
  double shift = max_of(logJ.val());
  Var js = t.gather_rows(t.exp(t.sub(logJ, t.constant(shift))), kv);
  StepWeights sw = initial_weights(t, model, k, js, shift);
  keep(out, keep_weights, sw);

  std::vector<int> ancestors;
  for (int step = 1; step <= T; ++step) {
    Var K = model.regime_prob_matrix(t, caches, k);
    Var coupling = t.mul(K, sw.wbar);
    Var mix_cols = t.sum_rows(coupling);
    const Tensor col_mass = mix_cols.val();

    sample_ancestors(coupling.val(), col_mass.d, cfg.resampler, n_reg, step, rng, ancestors);
    Var r_anc = t.gather_rows(caches, ancestors);
    Var caches_new = model.cache_update(t, k, r_anc);

    Var logJ_t =
        model.joint_log_density_by_regime(t, truth_x[step], truth_x[step - 1], obs[step], false);
    shift = max_of(logJ_t.val());
    Var js_t = t.gather_rows(t.exp(t.sub(logJ_t, t.constant(shift))), kv);

    // the dynamic-model factor of the mixture is the constant uniform
    // surrogate, so the mixture term reduces to S_{k^n}
    Var mix = t.gather_rows(mix_cols, kv);

    StepWeights sw_t = assemble_weights(t, cfg.mode, k, js_t, mix, coupling, sw.wbar,
                                        col_mass.d, ancestors, shift, n_reg, step);
    caches = caches_new;
    sw = sw_t;
    keep(out, keep_weights, sw);
  }
  return out;
}

}  // namespace dimmpf
