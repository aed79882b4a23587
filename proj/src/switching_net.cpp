#include "dimmpf/switching_net.hpp"

#include <algorithm>
#include <cmath>

namespace dimmpf {

namespace {
Tensor glorot(int rows, int cols, RandomStream& rng) {
  Tensor t(rows, cols);
  const double bound = std::sqrt(6.0 / (rows + cols));
  for (auto& v : t.d) v = bound * (2.0 * rng.uniform() - 1.0);
  return t;
}
}  // namespace

void init_switching_params(ThetaStore& store, const SwitchingConfig& cfg, RandomStream& rng) {
  store.add("sw.theta1", glorot(cfg.d_r, cfg.d_r, rng));
  store.add("sw.theta2", glorot(cfg.d_r, cfg.n_reg, rng));
  store.add("sw.theta3", glorot(cfg.d_r, cfg.n_reg, rng));
  store.add("sw.theta4", glorot(cfg.n_reg, cfg.d_h, rng));
  store.add("sw.theta5", glorot(cfg.d_h, cfg.d_r, rng));
  store.add("sw.prior_logits", Tensor(cfg.n_reg, 1));
}

SwitchingRefs bind_switching(const ThetaStore& store, std::span<const Var> leaves,
                             const SwitchingConfig& cfg) {
  SwitchingRefs r;
  r.th1 = leaves[store.find("sw.theta1")];
  r.th2 = leaves[store.find("sw.theta2")];
  r.th3 = leaves[store.find("sw.theta3")];
  r.th4 = leaves[store.find("sw.theta4")];
  r.th5 = leaves[store.find("sw.theta5")];
  r.prior_logits = leaves[store.find("sw.prior_logits")];
  r.cfg = cfg;
  return r;
}

namespace {
// column k of an (r x c) matrix as an (r x 1) Var
Var column_of(Tape& t, Var m, int k, int rows) {
  std::vector<int> ri(rows), ci(rows, k);
  for (int i = 0; i < rows; ++i) ri[i] = i;
  return t.gather2d(m, std::move(ri), std::move(ci));
}
}  // namespace

Var cache_update(Tape& t, const SwitchingRefs& p, int k, Var r_prev) {
  Var g1 = t.sigmoid(t.matvec(p.th1, r_prev));
  Var g2 = t.sigmoid(column_of(t, p.th2, k, p.cfg.d_r));
  Var keep = t.mul(t.mul(g1, g2), r_prev);
  Var fresh = t.tanh(column_of(t, p.th3, k, p.cfg.d_r));
  return t.add(keep, fresh);
}

Var regime_probs(Tape& t, const SwitchingRefs& p, Var r_prev) {
  Var h = t.tanh(t.matvec(p.th5, r_prev));
  Var u = t.add(t.abs(t.matvec(p.th4, h)), t.constant(kRegimeProbFloor));
  return t.div(u, t.sum(u));
}

Var regime_prior(Tape& t, const SwitchingRefs& p) {
  const Tensor& logits = p.prior_logits.val();
  double m = *std::max_element(logits.d.begin(), logits.d.end());
  Var e = t.exp(t.sub(p.prior_logits, t.constant(m)));
  return t.div(e, t.sum(e));
}

Var cache_update_batch(Tape& t, const SwitchingRefs& p, std::span<const int> k, Var r_prev) {
  std::vector<int> kv(k.begin(), k.end());
  Var g1 = t.sigmoid(t.matmul(r_prev, p.th1, false, true));
  Var g2 = t.sigmoid(t.gather_cols_t(p.th2, kv));
  Var keep = t.mul(t.mul(g1, g2), r_prev);
  Var fresh = t.tanh(t.gather_cols_t(p.th3, std::move(kv)));
  return t.add(keep, fresh);
}

Var regime_prob_matrix(Tape& t, const SwitchingRefs& p, Var r_prev) {
  Var h = t.tanh(t.matmul(r_prev, p.th5, false, true));
  Var u = t.add(t.abs(t.matmul(h, p.th4, false, true)), t.constant(kRegimeProbFloor));
  return t.div(u, t.sum_cols(u));
}

SwitchingView switching_view(const ThetaStore& store, const SwitchingConfig& cfg) {
  SwitchingView v;
  v.th1 = store.value("sw.theta1").data();
  v.th2 = store.value("sw.theta2").data();
  v.th3 = store.value("sw.theta3").data();
  v.th4 = store.value("sw.theta4").data();
  v.th5 = store.value("sw.theta5").data();
  v.prior_logits = store.value("sw.prior_logits").data();
  v.cfg = cfg;
  return v;
}

void plain_cache_update(const SwitchingView& v, int k, const double* r_prev, double* r_out) {
  const int d = v.cfg.d_r, q = v.cfg.n_reg;
  for (int i = 0; i < d; ++i) {
    double a = 0.0;
    for (int j = 0; j < d; ++j) a += v.th1[i * d + j] * r_prev[j];
    const double g1 = 1.0 / (1.0 + std::exp(-a));
    const double g2 = 1.0 / (1.0 + std::exp(-v.th2[i * q + k]));
    r_out[i] = g1 * g2 * r_prev[i] + std::tanh(v.th3[i * q + k]);
  }
}

void plain_regime_probs(const SwitchingView& v, const double* r, double* out) {
  const int d = v.cfg.d_r, q = v.cfg.n_reg, h = v.cfg.d_h;
  double hid[64];
  for (int i = 0; i < h; ++i) {
    double a = 0.0;
    for (int j = 0; j < d; ++j) a += v.th5[i * d + j] * r[j];
    hid[i] = std::tanh(a);
  }
  double total = 0.0;
  for (int i = 0; i < q; ++i) {
    double a = 0.0;
    for (int j = 0; j < h; ++j) a += v.th4[i * h + j] * hid[j];
    out[i] = std::fabs(a) + kRegimeProbFloor;
    total += out[i];
  }
  for (int i = 0; i < q; ++i) out[i] /= total;
}

void plain_regime_prior(const SwitchingView& v, double* out) {
  const int q = v.cfg.n_reg;
  double m = v.prior_logits[0];
  for (int i = 1; i < q; ++i) m = std::max(m, v.prior_logits[i]);
  double total = 0.0;
  for (int i = 0; i < q; ++i) {
    out[i] = std::exp(v.prior_logits[i] - m);
    total += out[i];
  }
  for (int i = 0; i < q; ++i) out[i] /= total;
}

}  // namespace dimmpf
