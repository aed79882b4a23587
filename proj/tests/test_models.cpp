#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dimmpf/learned_model.hpp"
#include "dimmpf/regime_models.hpp"
#include "dimmpf/switching_net.hpp"
#include "fd_check.hpp"

using namespace dimmpf;

namespace {

ThetaStore make_switching_store(uint64_t seed, const SwitchingConfig& cfg = {}) {
  ThetaStore s;
  RandomStream rng(seed);
  init_switching_params(s, cfg, rng);
  return s;
}

// straight-line re-implementation of the gated cache update, written against
// the formula rather than the tape ops
std::vector<double> cache_update_oracle(const ThetaStore& s, const SwitchingConfig& cfg, int k,
                                        const std::vector<double>& r_prev) {
  const Tensor& t1 = s.value("sw.theta1");
  const Tensor& t2 = s.value("sw.theta2");
  const Tensor& t3 = s.value("sw.theta3");
  std::vector<double> out(cfg.d_r);
  for (int i = 0; i < cfg.d_r; ++i) {
    double a = 0;
    for (int j = 0; j < cfg.d_r; ++j) a += t1.at(i, j) * r_prev[j];
    const double s1 = 1.0 / (1.0 + std::exp(-a));
    const double s2 = 1.0 / (1.0 + std::exp(-t2.at(i, k)));
    out[i] = s1 * s2 * r_prev[i] + std::tanh(t3.at(i, k));
  }
  return out;
}

std::vector<double> regime_probs_oracle(const ThetaStore& s, const SwitchingConfig& cfg,
                                        const std::vector<double>& r) {
  const Tensor& t4 = s.value("sw.theta4");
  const Tensor& t5 = s.value("sw.theta5");
  std::vector<double> h(cfg.d_h), u(cfg.n_reg);
  for (int i = 0; i < cfg.d_h; ++i) {
    double a = 0;
    for (int j = 0; j < cfg.d_r; ++j) a += t5.at(i, j) * r[j];
    h[i] = std::tanh(a);
  }
  double total = 0;
  for (int q = 0; q < cfg.n_reg; ++q) {
    double a = 0;
    for (int j = 0; j < cfg.d_h; ++j) a += t4.at(q, j) * h[j];
    u[q] = std::fabs(a) + 1e-8;
    total += u[q];
  }
  for (auto& v : u) v /= total;
  return u;
}

Var tape_cache_update(Tape& t, const ThetaStore& s, const SwitchingConfig& cfg, int k,
                      const std::vector<double>& r_prev) {
  auto leaves = s.bind_all(t);
  SwitchingRefs refs = bind_switching(s, leaves, cfg);
  return cache_update(t, refs, k, t.constant(Tensor::column(r_prev)));
}

}  // namespace

TEST_CASE("cache update reduces to tanh(Theta3 k') from a zero cache") {
  SwitchingConfig cfg;
  ThetaStore s = make_switching_store(3);
  std::vector<double> zero(cfg.d_r, 0.0);
  for (int k = 0; k < cfg.n_reg; ++k) {
    Tape t;
    Var r = tape_cache_update(t, s, cfg, k, zero);
    const Tensor& t3 = s.value("sw.theta3");
    for (int i = 0; i < cfg.d_r; ++i)
      CHECK(r.val().d[i] == doctest::Approx(std::tanh(t3.at(i, k))).epsilon(1e-14));
  }

  ThetaStore s0 = make_switching_store(4);
  std::fill(s0.value("sw.theta3").d.begin(), s0.value("sw.theta3").d.end(), 0.0);
  Tape t;
  Var r = tape_cache_update(t, s0, cfg, 2, zero);
  for (double v : r.val().d) CHECK(v == 0.0);
}

TEST_CASE("cache update and regime probs match straight-line oracles") {
  SwitchingConfig cfg;
  for (uint64_t seed = 10; seed < 20; ++seed) {
    ThetaStore s = make_switching_store(seed);
    RandomStream rng(seed * 77);
    std::vector<double> r_prev(cfg.d_r);
    for (auto& v : r_prev) v = rng.normal();
    const int k = static_cast<int>(rng.uniform() * cfg.n_reg);

    Tape t;
    Var got = tape_cache_update(t, s, cfg, k, r_prev);
    auto want = cache_update_oracle(s, cfg, k, r_prev);
    for (int i = 0; i < cfg.d_r; ++i)
      CHECK(got.val().d[i] == doctest::Approx(want[i]).epsilon(1e-13));

    Tape t2;
    auto leaves = s.bind_all(t2);
    SwitchingRefs refs = bind_switching(s, leaves, cfg);
    Var probs = regime_probs(t2, refs, t2.constant(Tensor::column(r_prev)));
    auto wantp = regime_probs_oracle(s, cfg, r_prev);
    double sum = 0;
    for (int q = 0; q < cfg.n_reg; ++q) {
      CHECK(probs.val().d[q] == doctest::Approx(wantp[q]).epsilon(1e-13));
      sum += probs.val().d[q];
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-12);

    // plain path agrees with the tape path
    double plain_r[64], plain_p[64];
    SwitchingView view = switching_view(s, cfg);
    plain_cache_update(view, k, r_prev.data(), plain_r);
    plain_regime_probs(view, r_prev.data(), plain_p);
    for (int i = 0; i < cfg.d_r; ++i) CHECK(plain_r[i] == doctest::Approx(want[i]).epsilon(1e-13));
    for (int q = 0; q < cfg.n_reg; ++q)
      CHECK(plain_p[q] == doctest::Approx(wantp[q]).epsilon(1e-13));
  }
}

TEST_CASE("batched switching ops agree with single-cache ops") {
  SwitchingConfig cfg;
  ThetaStore s = make_switching_store(5);
  RandomStream rng(123);
  const int n = 6;
  Tensor rmat(n, cfg.d_r);
  std::vector<int> ks(n);
  for (int i = 0; i < n; ++i) {
    ks[i] = static_cast<int>(rng.uniform() * cfg.n_reg);
    for (int j = 0; j < cfg.d_r; ++j) rmat.at(i, j) = rng.normal();
  }
  Tape t;
  auto leaves = s.bind_all(t);
  SwitchingRefs refs = bind_switching(s, leaves, cfg);
  Var batch_r = cache_update_batch(t, refs, ks, t.constant(rmat));
  Var batch_k = regime_prob_matrix(t, refs, t.constant(rmat));
  for (int i = 0; i < n; ++i) {
    std::vector<double> row(cfg.d_r);
    for (int j = 0; j < cfg.d_r; ++j) row[j] = rmat.at(i, j);
    Var single_r = cache_update(t, refs, ks[i], t.constant(Tensor::column(row)));
    Var single_k = regime_probs(t, refs, t.constant(Tensor::column(row)));
    for (int j = 0; j < cfg.d_r; ++j)
      CHECK(batch_r.val().at(i, j) == doctest::Approx(single_r.val().d[j]).epsilon(1e-14));
    for (int q = 0; q < cfg.n_reg; ++q)
      CHECK(batch_k.val().at(i, q) == doctest::Approx(single_k.val().d[q]).epsilon(1e-14));
  }
}

TEST_CASE("regime probabilities: symmetry and saturation properties") {
  SwitchingConfig cfg;
  ThetaStore s = make_switching_store(6);
  // identical Theta4 rows -> uniform law
  Tensor& t4 = s.value("sw.theta4");
  for (int q = 1; q < cfg.n_reg; ++q)
    for (int j = 0; j < cfg.d_h; ++j) t4.at(q, j) = t4.at(0, j);
  Tape t;
  auto leaves = s.bind_all(t);
  SwitchingRefs refs = bind_switching(s, leaves, cfg);
  RandomStream rng(7);
  std::vector<double> r(cfg.d_r);
  for (auto& v : r) v = rng.normal();
  Var probs = regime_probs(t, refs, t.constant(Tensor::column(r)));
  for (int q = 0; q < cfg.n_reg; ++q)
    CHECK(probs.val().d[q] == doctest::Approx(1.0 / cfg.n_reg).epsilon(1e-12));

  // saturating gates: Theta1, Theta2 -> -inf entries drive r to tanh(Theta3 k')
  ThetaStore s2 = make_switching_store(8);
  std::fill(s2.value("sw.theta1").d.begin(), s2.value("sw.theta1").d.end(), -60.0);
  std::fill(s2.value("sw.theta2").d.begin(), s2.value("sw.theta2").d.end(), -60.0);
  Tape t2;
  Var upd = tape_cache_update(t2, s2, cfg, 3, r);
  const Tensor& t3 = s2.value("sw.theta3");
  for (int i = 0; i < cfg.d_r; ++i)
    CHECK(upd.val().d[i] == doctest::Approx(std::tanh(t3.at(i, 3))).epsilon(1e-12));
}

TEST_CASE("regime prior softmax values and gradient") {
  SwitchingConfig cfg;
  ThetaStore s = make_switching_store(9);
  {
    Tape t;
    auto leaves = s.bind_all(t);
    Var prior = regime_prior(t, bind_switching(s, leaves, cfg));
    for (int q = 0; q < cfg.n_reg; ++q)
      CHECK(prior.val().d[q] == doctest::Approx(1.0 / cfg.n_reg).epsilon(1e-14));
  }
  SwitchingConfig cfg2;
  cfg2.n_reg = 2;
  cfg2.d_r = 2;
  cfg2.d_h = 2;
  ThetaStore s2;
  RandomStream rng(1);
  init_switching_params(s2, cfg2, rng);
  s2.value("sw.prior_logits").d = {std::log(2.0), 0.0};
  Tape t;
  auto leaves = s2.bind_all(t);
  Var prior = regime_prior(t, bind_switching(s2, leaves, cfg2));
  CHECK(prior.val().d[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(prior.val().d[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-14));

  // gradient of log prior(k) w.r.t. logits against finite differences
  auto eval = [&](std::span<const double> flat) {
    ThetaStore sc = s2;
    std::vector<double> all(sc.flat_size());
    sc.flatten_values(all);
    const size_t off = sc.offset(sc.find("sw.prior_logits"));
    for (size_t i = 0; i < 2; ++i) all[off + i] = flat[i];
    sc.unflatten_values(all);
    Tape tt;
    auto lv = sc.bind_all(tt);
    Var p = regime_prior(tt, bind_switching(sc, lv, cfg2));
    return tt.log(tt.gather_rows(p, {0})).scalar();
  };
  Tape tg;
  auto lg = s2.bind_all(tg);
  SwitchingRefs refs = bind_switching(s2, lg, cfg2);
  Var root = tg.log(tg.gather_rows(regime_prior(tg, refs), {0}));
  tg.backward(root);
  const Tensor& g = tg.adjoint(refs.prior_logits);
  std::vector<double> x = {std::log(2.0), 0.0};
  CHECK(testutil::max_rel_grad_err(eval, x, std::span<const double>(g.d)) <= 1e-5);
}

TEST_CASE("switching gradients match finite differences (both network ops)") {
  SwitchingConfig cfg;
  for (uint64_t seed = 31; seed < 34; ++seed) {
    ThetaStore s = make_switching_store(seed);
    RandomStream rng(seed);
    std::vector<double> r_prev(cfg.d_r);
    for (auto& v : r_prev) v = rng.normal();
    const int k = static_cast<int>(rng.uniform() * cfg.n_reg);
    std::vector<double> probe(cfg.d_r);
    for (auto& v : probe) v = rng.normal();

    // scalar readouts: probe-weighted cache update, and log K(k | r)
    auto eval_cache = [&](std::span<const double> flat) {
      ThetaStore sc = s;
      sc.unflatten_values(flat);
      Tape tt;
      Var r = tape_cache_update(tt, sc, cfg, k, r_prev);
      return tt.sum(tt.mul(r, tt.constant(Tensor::column(probe)))).scalar();
    };
    auto eval_probs = [&](std::span<const double> flat) {
      ThetaStore sc = s;
      sc.unflatten_values(flat);
      Tape tt;
      auto lv = sc.bind_all(tt);
      Var p = regime_probs(tt, bind_switching(sc, lv, cfg), tt.constant(Tensor::column(r_prev)));
      return tt.log(tt.gather_rows(p, {k})).scalar();
    };

    std::vector<double> flat(s.flat_size());
    s.flatten_values(flat);

    {
      Tape tt;
      auto lv = s.bind_all(tt);
      SwitchingRefs refs = bind_switching(s, lv, cfg);
      Var r = cache_update(tt, refs, k, tt.constant(Tensor::column(r_prev)));
      tt.backward(tt.sum(tt.mul(r, tt.constant(Tensor::column(probe)))));
      std::vector<double> ad(s.flat_size(), 0.0);
      tt.accumulate_param_grads(s.offsets(), ad);
      CHECK(testutil::max_rel_grad_err(eval_cache, flat, ad) <= 1e-5);
    }
    {
      Tape tt;
      auto lv = s.bind_all(tt);
      SwitchingRefs refs = bind_switching(s, lv, cfg);
      Var p = regime_probs(tt, refs, tt.constant(Tensor::column(r_prev)));
      tt.backward(tt.log(tt.gather_rows(p, {k})));
      std::vector<double> ad(s.flat_size(), 0.0);
      tt.accumulate_param_grads(s.offsets(), ad);
      CHECK(testutil::max_rel_grad_err(eval_probs, flat, ad) <= 1e-5);
    }
  }
}

// --- per-regime networks and densities ---

namespace {
ThetaStore make_net_store(uint64_t seed) {
  ThetaStore s;
  RandomStream rng(seed);
  RegimeNetConfig cfg;
  init_regime_params(s, cfg, rng);
  return s;
}
}  // namespace

TEST_CASE("dynamic sampling: zero noise hits the mean, identical inputs repeat") {
  ThetaStore s = make_net_store(2);
  RegimeNetConfig cfg;
  Tape t;
  auto lv = s.bind_all(t);
  RegimeModelRefs m = bind_regime_models(s, lv, cfg);
  Var a = dyn_sample(t, m, 0.37, 2, 0.0);
  Var mean = net_mean_batch(t, m.dyn[2], t.constant(Tensor::scalar(0.37)));
  CHECK(a.scalar() == doctest::Approx(mean.scalar()).epsilon(1e-15));
  Var b = dyn_sample(t, m, 0.37, 2, 0.7);
  Var c = dyn_sample(t, m, 0.37, 2, 0.7);
  CHECK(b.scalar() == c.scalar());
  // tape and plain forward agree
  RegimeModelView view = regime_model_view(s, cfg);
  CHECK(net_eval(view.dyn[2], 0.37) == doctest::Approx(mean.scalar()).epsilon(1e-14));
}

TEST_CASE("gaussian log densities: mode, one-sigma point, textbook oracle") {
  ThetaStore s = make_net_store(3);
  RegimeNetConfig cfg;
  s.value("dyn.log_scale").d[0] = 0.0;  // unit scale
  Tape t;
  auto lv = s.bind_all(t);
  RegimeModelRefs m = bind_regime_models(s, lv, cfg);
  RegimeModelView view = regime_model_view(s, cfg);

  const double mean = net_eval(view.dyn[1], -0.4);
  Var at_mode = dyn_logpdf(t, m, mean, -0.4, 1);
  CHECK(at_mode.scalar() == doctest::Approx(-0.5 * std::log(2.0 * M_PI)).epsilon(1e-13));
  Var at_sigma = dyn_logpdf(t, m, mean + 1.0, -0.4, 1);
  CHECK(at_sigma.scalar() ==
        doctest::Approx(-0.5 * std::log(2.0 * M_PI) - 0.5).epsilon(1e-13));

  RandomStream rng(4);
  for (int rep = 0; rep < 20; ++rep) {
    const double x = rng.normal(), xp = rng.normal(), y = rng.normal();
    const int k = static_cast<int>(rng.uniform() * cfg.n_reg);
    Var ld = dyn_logpdf(t, m, x, xp, k);
    Var lo = obs_logpdf(t, m, y, x, k);
    const double want_d = plain_gaussian_logpdf(x, net_eval(view.dyn[k], xp), view.dyn_scale);
    const double want_o = plain_gaussian_logpdf(y, net_eval(view.obs[k], x), view.obs_scale);
    // independent textbook evaluation
    auto textbook = [](double v, double mu, double sd) {
      return std::log(1.0 / (sd * std::sqrt(2.0 * M_PI)) *
                      std::exp(-(v - mu) * (v - mu) / (2.0 * sd * sd)));
    };
    CHECK(ld.scalar() == doctest::Approx(want_d).epsilon(1e-12));
    CHECK(ld.scalar() ==
          doctest::Approx(textbook(x, net_eval(view.dyn[k], xp), view.dyn_scale)).epsilon(1e-9));
    CHECK(lo.scalar() == doctest::Approx(want_o).epsilon(1e-12));
  }
}

TEST_CASE("exp(dyn_logpdf) integrates to one over +-8 scales") {
  ThetaStore s = make_net_store(5);
  RegimeNetConfig cfg;
  RegimeModelView view = regime_model_view(s, cfg);
  const double mean = net_eval(view.dyn[4], 0.9);
  const double sd = view.dyn_scale;
  const int n = 40000;
  const double lo = mean - 8 * sd, hi = mean + 8 * sd, h = (hi - lo) / n;
  Tape t;
  auto lv = s.bind_all(t);
  RegimeModelRefs m = bind_regime_models(s, lv, cfg);
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double f = std::exp(dyn_logpdf(t, m, x, 0.9, 4).scalar());
    acc += (i == 0 || i == n) ? 0.5 * f : f;
  }
  acc *= h;
  CHECK(std::fabs(acc - 1.0) <= 1e-6);

  // the density is maximized exactly at the network mean
  const double at_mean = dyn_logpdf(t, m, mean, 0.9, 4).scalar();
  for (double d : {1e-3, 0.1, 1.0})
    for (double sgn : {-1.0, 1.0})
      CHECK(dyn_logpdf(t, m, mean + sgn * d, 0.9, 4).scalar() < at_mean);
}

TEST_CASE("density gradients w.r.t. weights and scales match finite differences") {
  ThetaStore s = make_net_store(6);
  RegimeNetConfig cfg;
  auto eval = [&](std::span<const double> flat) {
    ThetaStore sc = s;
    sc.unflatten_values(flat);
    Tape tt;
    auto lv = sc.bind_all(tt);
    RegimeModelRefs mm = bind_regime_models(sc, lv, cfg);
    Var a = dyn_logpdf(tt, mm, 0.3, -0.8, 2);
    Var b = obs_logpdf(tt, mm, -1.1, 0.3, 5);
    return tt.add(a, b).scalar();
  };
  std::vector<double> flat(s.flat_size());
  s.flatten_values(flat);
  Tape tt;
  auto lv = s.bind_all(tt);
  RegimeModelRefs mm = bind_regime_models(s, lv, cfg);
  tt.backward(tt.add(dyn_logpdf(tt, mm, 0.3, -0.8, 2), obs_logpdf(tt, mm, -1.1, 0.3, 5)));
  std::vector<double> ad(s.flat_size(), 0.0);
  tt.accumulate_param_grads(s.offsets(), ad);

  // spot-check a sample of coordinates (hidden weights, biases, scales)
  std::vector<size_t> coords;
  coords.push_back(s.offset(s.find("dyn.k3.w2")) + 17);
  coords.push_back(s.offset(s.find("dyn.k3.w1")) + 4);
  coords.push_back(s.offset(s.find("dyn.k3.b2")) + 2);
  coords.push_back(s.offset(s.find("obs.k6.w2")) + 60);
  coords.push_back(s.offset(s.find("obs.k6.b1")) + 9);
  coords.push_back(s.offset(s.find("dyn.log_scale")));
  coords.push_back(s.offset(s.find("obs.log_scale")));
  for (size_t c : coords) {
    const double fd = testutil::fd_partial(eval, flat, c);
    CHECK(testutil::close_rel(ad[c], fd, 1e-5));
  }
  // sampling gradient w.r.t. a hidden weight
  auto eval_sample = [&](std::span<const double> flat2) {
    ThetaStore sc = s;
    sc.unflatten_values(flat2);
    Tape t2;
    auto lv2 = sc.bind_all(t2);
    RegimeModelRefs m2 = bind_regime_models(sc, lv2, cfg);
    return dyn_sample(t2, m2, 0.45, 1, 0.8).scalar();
  };
  Tape t3;
  auto lv3 = s.bind_all(t3);
  RegimeModelRefs m3 = bind_regime_models(s, lv3, cfg);
  t3.backward(dyn_sample(t3, m3, 0.45, 1, 0.8));
  std::vector<double> ad3(s.flat_size(), 0.0);
  t3.accumulate_param_grads(s.offsets(), ad3);
  const size_t c = s.offset(s.find("dyn.k2.w2")) + 33;
  CHECK(testutil::close_rel(ad3[c], testutil::fd_partial(eval_sample, flat, c), 1e-5));
}

TEST_CASE("batched plain network evaluation matches the scalar path") {
  ThetaStore s = make_net_store(8);
  RegimeNetConfig cfg;
  RegimeModelView view = regime_model_view(s, cfg);
  RandomStream rng(2);
  std::vector<double> xs(37), out(37);
  for (auto& v : xs) v = 3.0 * rng.normal();
  net_eval_batch(view.dyn[3], xs.data(), out.data(), 37);
  for (int i = 0; i < 37; ++i)
    CHECK(out[i] == doctest::Approx(net_eval(view.dyn[3], xs[i])).epsilon(1e-12));
}

TEST_CASE("initial state sampler") {
  CHECK(prior_sample(0, 0.5) == 0.0);
  CHECK(prior_sample(3, 0.0) == -0.5);
  CHECK(prior_sample(7, 0.75) == 0.25);
}
