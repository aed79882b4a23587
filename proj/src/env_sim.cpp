#include "dimmpf/env_sim.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

namespace dimmpf {

double TrueModel::obs_mean(double x, int k) { return a[k] * std::sqrt(std::fabs(x)) + b[k]; }

void TrueModel::dyn_obs_step(double x_prev, int k, double e1, double e2, double& x, double& y) {
  const double s = std::sqrt(sigma2);
  x = dyn_mean(x_prev, k) + s * e1;
  y = obs_mean(x, k) + s * e2;
}

const char* env_name(EnvKind k) {
  switch (k) {
    case EnvKind::markov: return "markov";
    case EnvKind::polya: return "polya";
    case EnvKind::erlang: return "erlang";
  }
  return "?";
}

EnvKind parse_env(const std::string& s) {
  if (s == "markov") return EnvKind::markov;
  if (s == "polya") return EnvKind::polya;
  if (s == "erlang") return EnvKind::erlang;
  throw std::invalid_argument("unknown environment: " + s);
}

void MarkovMatrix::row(int from, double out[kNumRegimes]) {
  for (int j = 0; j < kNumRegimes; ++j) out[j] = kOther;
  out[from] = kStay;
  out[(from + 1) % kNumRegimes] = kNext;
}

void polya_law(const std::array<int, kNumRegimes>& counts, int t, double out[kNumRegimes]) {
  for (int j = 0; j < kNumRegimes; ++j)
    out[j] = (1.0 + counts[j]) / (kNumRegimes + t);
}

void erlang_conditional_law(int k_prev, bool m, bool alpha, double out[kNumRegimes]) {
  if (m) {
    for (int j = 0; j < kNumRegimes; ++j) out[j] = 1.0 / kNumRegimes;
    return;
  }
  for (int j = 0; j < kNumRegimes; ++j) out[j] = 0.0;
  if (!alpha) {
    out[k_prev] = 1.0;
  } else {
    out[(k_prev + 1) % kNumRegimes] = 0.6;
    out[(k_prev + kNumRegimes - 1) % kNumRegimes] = 0.4;
  }
}

void switch_init(EnvKind kind, SwitchState& s, RandomStream& rng) {
  s = SwitchState{};
  s.k = static_cast<int>(rng.uniform() * kNumRegimes);
  if (s.k >= kNumRegimes) s.k = kNumRegimes - 1;
  if (kind == EnvKind::polya) s.counts[s.k] = 1;
  if (kind == EnvKind::erlang) s.m_prev = rng.bernoulli(0.01) ? 1 : 0;
}

int switch_step(EnvKind kind, SwitchState& s, int t, RandomStream& rng,
                double law_out[kNumRegimes]) {
  double law[kNumRegimes];
  switch (kind) {
    case EnvKind::markov:
      MarkovMatrix::row(s.k, law);
      break;
    case EnvKind::polya:
      polya_law(s.counts, t, law);
      break;
    case EnvKind::erlang: {
      s.m = rng.bernoulli(0.01) ? 1 : 0;
      s.n = rng.bernoulli(0.2) ? 1 : 0;
      s.alpha = (s.n == 1 && s.l == 0) ? 1 : 0;
      erlang_conditional_law(s.k, s.m != 0, s.alpha != 0, law);
      break;
    }
  }
  if (law_out)
    for (int j = 0; j < kNumRegimes; ++j) law_out[j] = law[j];

  const int k_new = rng.categorical(law, kNumRegimes, 1.0);

  switch (kind) {
    case EnvKind::markov:
      break;
    case EnvKind::polya:
      s.counts[k_new] += 1;
      break;
    case EnvKind::erlang: {
      // completed-sojourn count for the regime being left
      if (k_new != s.k || s.m_prev == 1) s.counts[s.k] += 1;
      if (s.n == 1) s.l = (s.l > 0) ? s.l - 1 : s.counts[k_new];
      s.m_prev = s.m;
      break;
    }
  }
  s.k = k_new;
  return k_new;
}

TrajectoryRecord simulate_trajectory(EnvKind kind, int T, uint64_t traj_seed) {
  RandomStream rng(traj_seed);
  TrajectoryRecord r;
  r.seed = traj_seed;
  r.y.resize(T + 1);
  r.x.resize(T + 1);
  r.k.resize(T + 1);

  SwitchState s;
  switch_init(kind, s, rng);
  r.k[0] = static_cast<uint8_t>(s.k);
  const double x0 = rng.uniform() - 0.5;
  r.x[0] = x0;
  r.y[0] = TrueModel::obs_mean(x0, s.k) + std::sqrt(TrueModel::sigma2) * rng.normal();

  for (int t = 1; t <= T; ++t) {
    const int k = switch_step(kind, s, t, rng);
    const double e1 = rng.normal(), e2 = rng.normal();
    double x, y;
    TrueModel::dyn_obs_step(r.x[t - 1], k, e1, e2, x, y);
    r.x[t] = x;
    r.y[t] = y;
    r.k[t] = static_cast<uint8_t>(k);
  }
  return r;
}

Dataset generate_dataset(EnvKind kind, int n_traj, int T, uint64_t seed) {
  Dataset ds;
  ds.kind = kind;
  ds.T = static_cast<uint32_t>(T);
  const int n_train = n_traj / 2;
  const int n_val = n_traj / 4;
  for (int i = 0; i < n_traj; ++i) {
    uint64_t ts = RandomStream::derive_seed(seed, "traj", static_cast<uint64_t>(i));
    TrajectoryRecord r = simulate_trajectory(kind, T, ts);
    if (i < n_train)
      ds.train.push_back(std::move(r));
    else if (i < n_train + n_val)
      ds.val.push_back(std::move(r));
    else
      ds.test.push_back(std::move(r));
  }
  return ds;
}

namespace {
constexpr uint32_t kVersion = 1;
}

void Dataset::save_split(const std::string& path,
                         const std::vector<TrajectoryRecord>& split) const {
  FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("dataset: cannot open " + path + " for writing");
  std::fwrite("RSTD", 1, 4, f);
  uint32_t v = kVersion;
  std::fwrite(&v, sizeof v, 1, f);
  uint8_t kind_tag = static_cast<uint8_t>(kind);
  std::fwrite(&kind_tag, 1, 1, f);
  uint32_t n = static_cast<uint32_t>(split.size());
  std::fwrite(&n, sizeof n, 1, f);
  std::fwrite(&T, sizeof T, 1, f);
  for (const auto& r : split) {
    std::fwrite(&r.seed, sizeof r.seed, 1, f);
    for (uint32_t t = 0; t <= T; ++t) {
      std::fwrite(&r.y[t], sizeof(double), 1, f);
      std::fwrite(&r.x[t], sizeof(double), 1, f);
      uint8_t k1 = static_cast<uint8_t>(r.k[t] + 1);  // regimes are 1..8 on disk
      std::fwrite(&k1, 1, 1, f);
    }
  }
  std::fclose(f);
}

void Dataset::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  save_split(dir + "/train.rstd", train);
  save_split(dir + "/val.rstd", val);
  save_split(dir + "/test.rstd", test);
}

std::vector<TrajectoryRecord> Dataset::load_split(const std::string& path, EnvKind& kind,
                                                  uint32_t& T) {
  FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("dataset: cannot open " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4 || std::string(magic, 4) != "RSTD") {
    std::fclose(f);
    throw std::runtime_error("dataset: bad magic in " + path);
  }
  uint32_t v = 0;
  if (std::fread(&v, sizeof v, 1, f) != 1 || v != kVersion)
    throw std::runtime_error("dataset: unsupported version");
  uint8_t kind_tag = 0;
  std::fread(&kind_tag, 1, 1, f);
  kind = static_cast<EnvKind>(kind_tag);
  uint32_t n = 0;
  std::fread(&n, sizeof n, 1, f);
  std::fread(&T, sizeof T, 1, f);
  std::vector<TrajectoryRecord> out(n);
  for (auto& r : out) {
    if (std::fread(&r.seed, sizeof r.seed, 1, f) != 1)
      throw std::runtime_error("dataset: truncated");
    r.y.resize(T + 1);
    r.x.resize(T + 1);
    r.k.resize(T + 1);
    for (uint32_t t = 0; t <= T; ++t) {
      std::fread(&r.y[t], sizeof(double), 1, f);
      std::fread(&r.x[t], sizeof(double), 1, f);
      uint8_t k1 = 0;
      std::fread(&k1, 1, 1, f);
      r.k[t] = static_cast<uint8_t>(k1 - 1);
    }
  }
  std::fclose(f);
  return out;
}

Dataset Dataset::load(const std::string& dir) {
  Dataset ds;
  uint32_t T = 0;
  ds.train = load_split(dir + "/train.rstd", ds.kind, T);
  ds.val = load_split(dir + "/val.rstd", ds.kind, T);
  ds.test = load_split(dir + "/test.rstd", ds.kind, T);
  ds.T = T;
  return ds;
}

void Dataset::export_csv(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  auto dump = [&](const std::string& path, const std::vector<TrajectoryRecord>& split) {
    FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("dataset: cannot open " + path);
    std::fprintf(f, "traj,t,y,x,k\n");
    for (size_t i = 0; i < split.size(); ++i)
      for (uint32_t t = 0; t <= T; ++t)
        std::fprintf(f, "%zu,%u,%.17g,%.17g,%d\n", i, t, split[i].y[t], split[i].x[t],
                     split[i].k[t] + 1);
    std::fclose(f);
  };
  dump(dir + "/train.csv", train);
  dump(dir + "/val.csv", val);
  dump(dir + "/test.csv", test);
}

}  // namespace dimmpf
