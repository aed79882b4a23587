#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dimmpf/learned_model.hpp"
#include "dimmpf/plain_filter.hpp"
#include "dimmpf/resample.hpp"
#include "dimmpf/tape_filter.hpp"

using namespace dimmpf;

namespace {

LearnedModelConfig small_cfg(int n_reg) {
  LearnedModelConfig cfg;
  cfg.sw.n_reg = n_reg;
  cfg.sw.d_r = n_reg;
  cfg.sw.d_h = n_reg;
  cfg.nets.n_reg = n_reg;
  cfg.nets.hidden = 5;
  return cfg;
}

std::vector<double> random_obs(int T, uint64_t seed) {
  RandomStream rng(seed);
  std::vector<double> y(T + 1);
  for (auto& v : y) v = 2.0 * rng.normal();
  return y;
}

// two-particle fixture with a hand-controlled switching law and flat
// observation density
struct HandModel final : public PlainModel {
  int n_regimes() const override { return 2; }
  int cache_size() const override { return 1; }
  void regime_prior(double* out) const override { out[0] = out[1] = 0.5; }
  double sample_prior_state(int, RandomStream&) const override { return 0.0; }
  void cache_init(int k0, double* c, RandomStream&) const override { c[0] = k0; }
  void regime_probs(const double* c, int, double* out) const override {
    if (c[0] == 0.0) {
      out[0] = 0.8;
      out[1] = 0.2;
    } else {
      out[0] = 0.4;
      out[1] = 0.6;
    }
  }
  void cache_transition(const double*, int k_new, int, double* out) const override {
    out[0] = k_new;
  }
  double propagate(double, int, RandomStream&) const override { return 0.0; }
  double obs_log_density(double, double, int) const override { return std::log(0.7); }
};

}  // namespace

TEST_CASE("deterministic regime blocks") {
  auto k8 = block_regime_assignment(8, 8);
  for (int n = 0; n < 8; ++n) CHECK(k8[n] == n);
  auto k16 = block_regime_assignment(16, 8);
  CHECK(k16[0] == 0);
  CHECK(k16[1] == 0);
  CHECK(k16[2] == 1);
  CHECK(k16[15] == 7);
  for (int q = 0; q < 8; ++q) {
    int count = 0;
    for (int v : k16) count += v == q ? 1 : 0;
    CHECK(count == 2);
  }
  CHECK_THROWS_AS(block_regime_assignment(12, 8), std::invalid_argument);
  CHECK_THROWS_AS(block_regime_assignment(4, 8), std::invalid_argument);
}

TEST_CASE("resampling-law columns normalize to one") {
  // all weights equal, K uniform -> every normalized entry 1/N; a
  // single heavy particle owns every column
  const int n = 6;
  Tensor c(n, 2);
  for (auto& v : c.d) v = (1.0 / n) * 0.5;
  std::vector<double> mass(2, 0.5);
  for (int col = 0; col < 2; ++col) {
    double colsum = 0;
    for (int m = 0; m < n; ++m) colsum += c.at(m, col) / mass[col];
    CHECK(colsum == doctest::Approx(1.0).epsilon(1e-12));
    for (int m = 0; m < n; ++m)
      CHECK(c.at(m, col) / mass[col] == doctest::Approx(1.0 / n).epsilon(1e-12));
  }

  Tensor d(n, 2);
  d.at(2, 0) = 0.9;
  d.at(2, 1) = 0.1;
  std::vector<double> dm = {0.9, 0.1};
  for (int col = 0; col < 2; ++col)
    CHECK(d.at(2, col) / dm[col] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("point-mass column sends every ancestor to the heavy particle") {
  const int n = 8;
  Tensor c(n, 1);
  c.at(3, 0) = 1.0;
  std::vector<double> mass = {1.0};
  std::vector<int> anc;
  RandomStream rng(4);
  for (ResamplerKind kind : {ResamplerKind::multinomial, ResamplerKind::systematic}) {
    sample_ancestors(c, mass, kind, 1, 1, rng, anc);
    for (int a : anc) CHECK(a == 3);
  }
}

TEST_CASE("systematic resampling of a uniform column is a permutation") {
  const int n = 16;
  Tensor c(n, 1);
  for (auto& v : c.d) v = 1.0 / n;
  std::vector<double> mass = {1.0};
  std::vector<int> anc;
  RandomStream rng(9);
  sample_ancestors(c, mass, ResamplerKind::systematic, 1, 1, rng, anc);
  std::vector<int> seen(n, 0);
  for (int a : anc) ++seen[a];
  for (int s : seen) CHECK(s == 1);
}

TEST_CASE("multinomial ancestor frequencies match the column within 3 SE") {
  const int n = 8;
  Tensor c(n, 1);
  RandomStream wr(17);
  double mass = 0;
  for (auto& v : c.d) {
    v = wr.uniform() + 0.05;
    mass += v;
  }
  std::vector<double> massv = {mass};
  std::vector<int> anc;
  RandomStream rng(18);
  std::vector<long> counts(n, 0);
  const int rounds = 100000 / n;
  for (int r = 0; r < rounds; ++r) {
    sample_ancestors(c, massv, ResamplerKind::multinomial, 1, 1, rng, anc);
    for (int a : anc) ++counts[a];
  }
  const long draws = static_cast<long>(rounds) * n;
  for (int m = 0; m < n; ++m) {
    const double p = c.d[m] / mass;
    const double se = std::sqrt(p * (1 - p) / draws);
    CHECK(std::fabs(double(counts[m]) / draws - p) <= 3 * se + 1e-12);
  }
}

TEST_CASE("zero-mass column is signalled with the step index") {
  Tensor c(4, 1);
  std::vector<double> mass = {0.0};
  std::vector<int> anc;
  RandomStream rng(1);
  CHECK_THROWS_AS(sample_ancestors(c, mass, ResamplerKind::systematic, 1, 7, rng, anc),
                  FilterFailure);
  try {
    sample_ancestors(c, mass, ResamplerKind::systematic, 1, 7, rng, anc);
  } catch (const FilterFailure& e) {
    CHECK(e.step == 7);
  }
}

TEST_CASE("all estimator modes share forward values across 100+ random steps") {
  // 35 random configurations x T=3 steps >= 100 filter steps
  int checked_steps = 0;
  for (uint64_t seed = 1; seed <= 35; ++seed) {
    LearnedModelConfig cfg = small_cfg(4);
    ThetaStore store = init_learned_store(cfg, seed);
    auto obs = random_obs(3, seed * 31 + 1);

    std::vector<std::vector<double>> fwd[3];
    const EstimatorMode modes[] = {EstimatorMode::rao_blackwellised, EstimatorMode::naive,
                                   EstimatorMode::detached};
    for (int m = 0; m < 3; ++m) {
      Tape tape;
      TapeLearnedModel model(store, cfg);
      FilterConfig fc;
      fc.particles = 16;
      fc.mode = modes[m];
      fc.resampler = seed % 2 ? ResamplerKind::systematic : ResamplerKind::multinomial;
      RandomStream rng = RandomStream::derived(seed, "mode-eq");
      TapeFilterOutput out = run_tape_filter(tape, model, obs, fc, rng, true);
      fwd[m] = out.step_weights;
      for (size_t t = 0; t < out.mean.size(); ++t) {
        fwd[m][t].push_back(out.mean[t].scalar());
        fwd[m][t].push_back(out.log_wsum[t].scalar());
      }
    }
    for (size_t t = 0; t < fwd[0].size(); ++t) {
      ++checked_steps;
      for (int m = 1; m < 3; ++m) {
        REQUIRE(fwd[m][t].size() == fwd[0][t].size());
        for (size_t i = 0; i < fwd[0][t].size(); ++i) {
          const double a = fwd[0][t][i], b = fwd[m][t][i];
          CHECK(std::fabs(a - b) <= 1e-10 * std::max({1.0, std::fabs(a), std::fabs(b)}));
        }
      }
    }
  }
  CHECK(checked_steps >= 100);
}

TEST_CASE("degenerate single-particle single-regime filter is a bootstrap update") {
  LearnedModelConfig cfg = small_cfg(1);
  ThetaStore store = init_learned_store(cfg, 5);
  auto obs = random_obs(1, 77);
  Tape tape;
  TapeLearnedModel model(store, cfg);
  FilterConfig fc;
  fc.particles = 1;
  fc.mode = EstimatorMode::rao_blackwellised;
  RandomStream rng(3);
  TapeFilterOutput out = run_tape_filter(tape, model, obs, fc, rng, true);

  // reproduce G(y | x, k) from the plain side at both steps
  PlainLearnedModel plain(store, cfg);
  RandomStream rng2(3);
  const double x0 = plain.sample_prior_state(0, rng2);
  const double g0 = std::exp(plain.obs_log_density(obs[0], x0, 0));
  CHECK(out.log_wsum[0].scalar() == doctest::Approx(std::log(g0)).epsilon(1e-10));
  rng2.uniform();  // systematic draw
  const double x1 = plain.propagate(x0, 0, rng2);
  const double g1 = std::exp(plain.obs_log_density(obs[1], x1, 0));
  CHECK(out.log_wsum[1].scalar() == doctest::Approx(std::log(g1)).epsilon(1e-10));
  CHECK(out.mean[1].scalar() == doctest::Approx(x1).epsilon(1e-12));
}

TEST_CASE("two-particle hand case reproduces the mixture weight") {
  HandModel model;
  FilterConfig fc;
  fc.particles = 2;
  fc.mode = EstimatorMode::detached;
  RandomStream rng(12);
  PlainFilterOutput out = run_plain_filter(model, std::vector<double>{0.0, 0.0}, fc, rng);
  // t=0: equal weights -> wbar = (1/2, 1/2); t=1 column masses are
  // S_0 = 0.8/2 + 0.4/2 = 0.6 and S_1 = 0.2/2 + 0.6/2 = 0.4, so
  // sum_n w_1^n = 0.7*(0.6 + 0.4)/2 and the calibrated log sum adds 2 log 2
  const double expected = std::log(0.7 * (0.6 + 0.4) / 2.0) + 2.0 * std::log(2.0);
  CHECK(out.log_wsum[1] == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("tape filter and the separately coded plain filter agree step by step") {
  for (uint64_t seed = 2; seed <= 6; ++seed) {
    LearnedModelConfig cfg = small_cfg(4);
    ThetaStore store = init_learned_store(cfg, seed * 13);
    auto obs = random_obs(6, seed);
    for (ResamplerKind res : {ResamplerKind::systematic, ResamplerKind::multinomial}) {
      FilterConfig fc;
      fc.particles = 24;
      fc.mode = EstimatorMode::detached;
      fc.resampler = res;

      Tape tape;
      TapeLearnedModel tmodel(store, cfg);
      RandomStream rng_a = RandomStream::derived(seed, "fwd-eq", static_cast<int>(res));
      TapeFilterOutput a = run_tape_filter(tape, tmodel, obs, fc, rng_a);

      PlainLearnedModel pmodel(store, cfg);
      RandomStream rng_b = RandomStream::derived(seed, "fwd-eq", static_cast<int>(res));
      PlainFilterOutput b = run_plain_filter(pmodel, obs, fc, rng_b);

      REQUIRE(a.mean.size() == b.mean.size());
      for (size_t t = 0; t < a.mean.size(); ++t) {
        CHECK(a.mean[t].scalar() == doctest::Approx(b.mean[t]).epsilon(1e-11));
        CHECK(a.log_wsum[t].scalar() == doctest::Approx(b.log_wsum[t]).epsilon(1e-11));
      }
    }
  }
}

TEST_CASE("identical seeds give identical outputs; different seeds differ") {
  LearnedModelConfig cfg = small_cfg(2);
  ThetaStore store = init_learned_store(cfg, 21);
  auto obs = random_obs(5, 3);
  FilterConfig fc;
  fc.particles = 8;
  PlainLearnedModel model(store, cfg);
  RandomStream r1(5), r2(5), r3(6);
  PlainFilterOutput a = run_plain_filter(model, obs, fc, r1);
  PlainFilterOutput b = run_plain_filter(model, obs, fc, r2);
  PlainFilterOutput c = run_plain_filter(model, obs, fc, r3);
  CHECK(a.mean == b.mean);
  CHECK(a.log_wsum == b.log_wsum);
  CHECK(a.mean != c.mean);
}

TEST_CASE("normalized weights sum to one and regimes stay balanced") {
  LearnedModelConfig cfg = small_cfg(4);
  ThetaStore store = init_learned_store(cfg, 31);
  auto obs = random_obs(5, 8);
  Tape tape;
  TapeLearnedModel model(store, cfg);
  FilterConfig fc;
  fc.particles = 32;
  RandomStream rng(2);
  TapeFilterOutput out = run_tape_filter(tape, model, obs, fc, rng, true);
  for (const auto& w : out.step_weights) {
    double s = 0;
    for (double v : w) s += v;
    double norm = 0;
    for (double v : w) norm += v / s;
    CHECK(std::fabs(norm - 1.0) <= 1e-10);
  }
  auto k = block_regime_assignment(32, 4);
  for (int q = 0; q < 4; ++q)
    CHECK(std::count(k.begin(), k.end(), q) == 8);
}

TEST_CASE("likelihood filter: single regime recovers the exact joint density") {
  LearnedModelConfig cfg = small_cfg(1);
  ThetaStore store = init_learned_store(cfg, 44);
  auto obs = random_obs(4, 9);
  std::vector<double> truth = random_obs(4, 10);
  for (auto& v : truth) v *= 0.2;

  Tape tape;
  TapeLearnedModel model(store, cfg);
  FilterConfig fc;
  fc.particles = 4;  // any count: the factor is regime-independent
  RandomStream rng(1);
  TapeFilterOutput out = run_tape_likelihood_filter(tape, model, truth, obs, fc, rng);
  double z = 0;
  for (auto& v : out.log_wsum) z += v.scalar();
  z -= out.log_wsum.size() * std::log(4.0);

  RegimeModelView view = regime_model_view(store, cfg.nets);
  double want = plain_gaussian_logpdf(obs[0], net_eval(view.obs[0], truth[0]), view.obs_scale);
  for (size_t t = 1; t < obs.size(); ++t) {
    want += plain_gaussian_logpdf(obs[t], net_eval(view.obs[0], truth[t]), view.obs_scale);
    want += plain_gaussian_logpdf(truth[t], net_eval(view.dyn[0], truth[t - 1]), view.dyn_scale);
  }
  CHECK(z == doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("likelihood filter: two identical regimes equal the single-regime value") {
  LearnedModelConfig cfg2 = small_cfg(2);
  ThetaStore s2 = init_learned_store(cfg2, 50);
  for (const char* fam : {"dyn", "obs"}) {
    for (const char* part : {"w1", "b1", "w2", "b2", "w3", "b3"}) {
      std::string a = std::string(fam) + ".k1." + part;
      std::string b = std::string(fam) + ".k2." + part;
      s2.value(b).d = s2.value(a).d;
    }
  }
  LearnedModelConfig cfg1 = small_cfg(1);
  ThetaStore s1 = init_learned_store(cfg1, 51);
  for (const char* fam : {"dyn", "obs"}) {
    for (const char* part : {"w1", "b1", "w2", "b2", "w3", "b3"}) {
      s1.value(std::string(fam) + ".k1." + part).d =
          s2.value(std::string(fam) + ".k1." + part).d;
    }
    s1.value(std::string(fam) + ".log_scale").d = s2.value(std::string(fam) + ".log_scale").d;
  }

  auto obs = random_obs(4, 60);
  std::vector<double> truth = random_obs(4, 61);

  auto run_z = [&](ThetaStore& s, LearnedModelConfig& cfg, int particles) {
    Tape tape;
    TapeLearnedModel model(s, cfg);
    FilterConfig fc;
    fc.particles = particles;
    RandomStream rng(7);
    TapeFilterOutput out = run_tape_likelihood_filter(tape, model, truth, obs, fc, rng);
    double z = 0;
    for (auto& v : out.log_wsum) z += v.scalar();
    return z - out.log_wsum.size() * std::log(double(particles));
  };
  CHECK(run_z(s2, cfg2, 8) == doctest::Approx(run_z(s1, cfg1, 8)).epsilon(1e-10));
}

TEST_CASE("likelihood filter modes share forward values") {
  LearnedModelConfig cfg = small_cfg(4);
  ThetaStore store = init_learned_store(cfg, 70);
  auto obs = random_obs(4, 71);
  std::vector<double> truth = random_obs(4, 72);
  double zs[3];
  const EstimatorMode modes[] = {EstimatorMode::rao_blackwellised, EstimatorMode::naive,
                                 EstimatorMode::detached};
  for (int m = 0; m < 3; ++m) {
    Tape tape;
    TapeLearnedModel model(store, cfg);
    FilterConfig fc;
    fc.particles = 16;
    fc.mode = modes[m];
    RandomStream rng(5);
    TapeFilterOutput out = run_tape_likelihood_filter(tape, model, truth, obs, fc, rng);
    zs[m] = 0;
    for (auto& v : out.log_wsum) zs[m] += v.scalar();
  }
  CHECK(zs[0] == doctest::Approx(zs[1]).epsilon(1e-12));
  CHECK(zs[0] == doctest::Approx(zs[2]).epsilon(1e-12));
}
