#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dimmpf/rng.hpp"

namespace dimmpf {

// Ground-truth data generation: per-regime linear-Gaussian models and the
// three switching dynamics (Markov chain, Polya urn, Erlang-like sojourns).
// Regime indices are 0-based in code.

constexpr int kNumRegimes = 8;

struct TrueModel {
  static constexpr std::array<double, 8> a = {-0.1, -0.3, -0.5, -0.9, 0.1, 0.3, 0.5, 0.9};
  static constexpr std::array<double, 8> b = {0.0, -2.0, 2.0, -4.0, 0.0, 2.0, -2.0, 4.0};
  static constexpr double sigma2 = 0.1;

  static double dyn_mean(double x_prev, int k) { return a[k] * x_prev + b[k]; }
  static double obs_mean(double x, int k);
  // x = a_k x_prev + b_k + sqrt(sigma2) e1;  y = a_k sqrt(|x|) + b_k + sqrt(sigma2) e2
  static void dyn_obs_step(double x_prev, int k, double e1, double e2, double& x, double& y);
};

enum class EnvKind : uint8_t { markov = 0, polya = 1, erlang = 2 };
const char* env_name(EnvKind k);
EnvKind parse_env(const std::string& s);

// Markov transition matrix: diagonal 0.8, cyclic super-diagonal 0.15, all
// remaining entries 1/120 (rows sum to 0.8 + 0.15 + 6/120 = 1).
struct MarkovMatrix {
  static constexpr double kStay = 0.8;
  static constexpr double kNext = 0.15;
  static constexpr double kOther = 1.0 / 120.0;
  static void row(int from, double out[kNumRegimes]);
};

// Sufficient statistics for one realized switching path. The Erlang members
// (l, m_prev and the per-step flags) are unused by the other kinds; the Polya
// urn reads `counts`.
struct SwitchState {
  int k = 0;
  std::array<int, kNumRegimes> counts{};
  int l = 0;
  int m_prev = 0;
  // flags of the latest step, for inspection and for the filter's latent carry
  int m = 0, n = 0, alpha = 0;
};

// Conditional laws given the state (and, for Erlang, the step's flags).
void polya_law(const std::array<int, kNumRegimes>& counts, int t, double out[kNumRegimes]);
void erlang_conditional_law(int k_prev, bool m, bool alpha, double out[kNumRegimes]);

void switch_init(EnvKind kind, SwitchState& s, RandomStream& rng);
// Samples k_t, updates the state, and (optionally) reports the conditional law
// it sampled from. t is the 1-based step index of the transition.
int switch_step(EnvKind kind, SwitchState& s, int t, RandomStream& rng,
                double law_out[kNumRegimes] = nullptr);

struct TrajectoryRecord {
  uint64_t seed = 0;
  std::vector<double> y, x;   // length T+1
  std::vector<uint8_t> k;     // 0-based regime indices
};

TrajectoryRecord simulate_trajectory(EnvKind kind, int T, uint64_t traj_seed);

struct Dataset {
  EnvKind kind = EnvKind::markov;
  uint32_t T = 50;
  std::vector<TrajectoryRecord> train, val, test;

  // One binary file per split: "RSTD" magic, u32 version, u8 kind, u32 n_traj,
  // u32 T, then per trajectory {u64 seed, (T+1) x (f64 y, f64 x, u8 k)}.
  void save_split(const std::string& path, const std::vector<TrajectoryRecord>& split) const;
  void save(const std::string& dir) const;
  static Dataset load(const std::string& dir);
  static std::vector<TrajectoryRecord> load_split(const std::string& path, EnvKind& kind,
                                                  uint32_t& T);
  void export_csv(const std::string& dir) const;
};

// n_traj trajectories split 2:1:1 (train/val/test), deterministic in seed.
Dataset generate_dataset(EnvKind kind, int n_traj, int T, uint64_t seed);

}  // namespace dimmpf
