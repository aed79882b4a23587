#include "dimmpf/regime_models.hpp"

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

void add_net(ThetaStore& store, const std::string& prefix, int h, RandomStream& rng) {
  store.add(prefix + ".w1", glorot(h, 1, rng));
  store.add(prefix + ".b1", Tensor(1, h));
  store.add(prefix + ".w2", glorot(h, h, rng));
  store.add(prefix + ".b2", Tensor(1, h));
  store.add(prefix + ".w3", glorot(h, 1, rng));
  store.add(prefix + ".b3", Tensor(1, 1));
}

NetRefs bind_net(const ThetaStore& store, std::span<const Var> leaves,
                 const std::string& prefix) {
  NetRefs n;
  n.w1 = leaves[store.find(prefix + ".w1")];
  n.b1 = leaves[store.find(prefix + ".b1")];
  n.w2 = leaves[store.find(prefix + ".w2")];
  n.b2 = leaves[store.find(prefix + ".b2")];
  n.w3 = leaves[store.find(prefix + ".w3")];
  n.b3 = leaves[store.find(prefix + ".b3")];
  return n;
}

NetView view_net(const ThetaStore& store, const std::string& prefix, int h) {
  NetView n;
  n.w1 = store.value(prefix + ".w1").data();
  n.b1 = store.value(prefix + ".b1").data();
  n.w2 = store.value(prefix + ".w2").data();
  n.b2 = store.value(prefix + ".b2").data();
  n.w3 = store.value(prefix + ".w3").data();
  n.b3 = store.value(prefix + ".b3").data();
  n.h = h;
  return n;
}
}  // namespace

void init_regime_params(ThetaStore& store, const RegimeNetConfig& cfg, RandomStream& rng) {
  for (int k = 0; k < cfg.n_reg; ++k) add_net(store, "dyn.k" + std::to_string(k + 1), cfg.hidden, rng);
  for (int k = 0; k < cfg.n_reg; ++k) add_net(store, "obs.k" + std::to_string(k + 1), cfg.hidden, rng);
  const double init_log_scale = 0.5 * std::log(0.1);
  store.add("dyn.log_scale", Tensor::scalar(init_log_scale));
  store.add("obs.log_scale", Tensor::scalar(init_log_scale));
}

RegimeModelRefs bind_regime_models(const ThetaStore& store, std::span<const Var> leaves,
                                   const RegimeNetConfig& cfg) {
  RegimeModelRefs m;
  m.cfg = cfg;
  for (int k = 0; k < cfg.n_reg; ++k)
    m.dyn.push_back(bind_net(store, leaves, "dyn.k" + std::to_string(k + 1)));
  for (int k = 0; k < cfg.n_reg; ++k)
    m.obs.push_back(bind_net(store, leaves, "obs.k" + std::to_string(k + 1)));
  m.dyn_log_scale = leaves[store.find("dyn.log_scale")];
  m.obs_log_scale = leaves[store.find("obs.log_scale")];
  return m;
}

Var net_mean_batch(Tape& t, const NetRefs& n, Var x) {
  return t.mlp(x, n.w1, n.b1, n.w2, n.b2, n.w3, n.b3);
}

Var gaussian_logpdf(Tape& t, Var mean, Var log_scale, const Tensor& value) {
  Var z = t.div(t.sub(mean, t.constant(value)), t.exp(log_scale));
  Var q = t.mul(t.mul(z, z), t.constant(-0.5));
  return t.add(q, t.sub(t.constant(-kHalfLog2Pi), log_scale));
}

Var gaussian_logpdf(Tape& t, Var mean, Var log_scale, double value) {
  return gaussian_logpdf(t, mean, log_scale, Tensor::scalar(value));
}

Var dyn_sample(Tape& t, const RegimeModelRefs& m, double x_prev, int k, double noise) {
  Var mean = net_mean_batch(t, m.dyn[k], t.constant(Tensor::scalar(x_prev)));
  return t.reparam(mean, t.exp(m.dyn_log_scale), Tensor::scalar(noise));
}

Var dyn_logpdf(Tape& t, const RegimeModelRefs& m, double x, double x_prev, int k) {
  Var mean = net_mean_batch(t, m.dyn[k], t.constant(Tensor::scalar(x_prev)));
  return gaussian_logpdf(t, mean, m.dyn_log_scale, x);
}

Var obs_logpdf(Tape& t, const RegimeModelRefs& m, double y, double x, int k) {
  Var mean = net_mean_batch(t, m.obs[k], t.constant(Tensor::scalar(x)));
  return gaussian_logpdf(t, mean, m.obs_log_scale, y);
}

RegimeModelView regime_model_view(const ThetaStore& store, const RegimeNetConfig& cfg) {
  RegimeModelView v;
  v.cfg = cfg;
  for (int k = 0; k < cfg.n_reg; ++k)
    v.dyn.push_back(view_net(store, "dyn.k" + std::to_string(k + 1), cfg.hidden));
  for (int k = 0; k < cfg.n_reg; ++k)
    v.obs.push_back(view_net(store, "obs.k" + std::to_string(k + 1), cfg.hidden));
  v.dyn_scale = std::exp(store.value("dyn.log_scale").d[0]);
  v.obs_scale = std::exp(store.value("obs.log_scale").d[0]);
  return v;
}

double net_eval(const NetView& n, double x) {
  double h1[32], h2[32];
  for (int j = 0; j < n.h; ++j) {
    const double a = n.w1[j] * x + n.b1[j];
    h1[j] = a > 0.0 ? a : 0.0;
  }
  for (int j = 0; j < n.h; ++j) {
    double a = n.b2[j];
    const double* row = n.w2 + static_cast<size_t>(j) * n.h;
    for (int k = 0; k < n.h; ++k) a += row[k] * h1[k];
    h2[j] = a > 0.0 ? a : 0.0;
  }
  double out = n.b3[0];
  for (int k = 0; k < n.h; ++k) out += n.w3[k] * h2[k];
  return out;
}

void net_eval_batch(const NetView& n, const double* xs, double* out, int count) {
  constexpr int kChunk = 16;
  const int h = n.h;
  double h1[kChunk * 32], h2[kChunk * 32];
  for (int base = 0; base < count; base += kChunk) {
    const int c = std::min(kChunk, count - base);
    for (int j = 0; j < h; ++j) {
      const double w = n.w1[j], b = n.b1[j];
      for (int i = 0; i < c; ++i) {
        const double a = w * xs[base + i] + b;
        h1[j * kChunk + i] = a > 0.0 ? a : 0.0;
      }
    }
    for (int j = 0; j < h; ++j) {
      const double* row = n.w2 + static_cast<size_t>(j) * h;
      const double b = n.b2[j];
      for (int i = 0; i < c; ++i) h2[j * kChunk + i] = b;
      for (int k = 0; k < h; ++k) {
        const double w = row[k];
        const double* src = h1 + k * kChunk;
        double* dst = h2 + j * kChunk;
        for (int i = 0; i < c; ++i) dst[i] += w * src[i];
      }
      for (int i = 0; i < c; ++i) {
        double& v = h2[j * kChunk + i];
        v = v > 0.0 ? v : 0.0;
      }
    }
    for (int i = 0; i < c; ++i) out[base + i] = n.b3[0];
    for (int k = 0; k < h; ++k) {
      const double w = n.w3[k];
      const double* src = h2 + k * kChunk;
      for (int i = 0; i < c; ++i) out[base + i] += w * src[i];
    }
  }
}

double plain_gaussian_logpdf(double value, double mean, double scale) {
  const double z = (value - mean) / scale;
  return -kHalfLog2Pi - std::log(scale) - 0.5 * z * z;
}

}  // namespace dimmpf
