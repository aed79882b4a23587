#pragma once

#include <string>
#include <vector>

#include "dimmpf/env_sim.hpp"
#include "dimmpf/learned_model.hpp"
#include "dimmpf/tape_filter.hpp"
#include "dimmpf/toy_model.hpp"

namespace dimmpf {

// --- filtering accuracy ---

struct MetricsReport {
  std::string label;
  std::vector<double> per_run_mse;  // one entry per seed / training run
  double mean_mse = 0.0, sd_mse = 0.0;
  int particles = 0, trajectories = 0;
  double seconds = 0.0;

  void finalize();
  void write_csv(const std::string& path) const;
  std::string summary() const;
};

// Reference filter with the true models over a test split; one run per seed.
MetricsReport oracle_immpf(EnvKind kind, std::span<const TrajectoryRecord> test, int particles,
                           int n_seeds, uint64_t seed, ResamplerKind resampler, int workers);

// Learned filter (inference path) over a split with a trained parameter set.
MetricsReport learned_eval(const ThetaStore& store, const LearnedModelConfig& mcfg,
                           std::span<const TrajectoryRecord> test, int particles, uint64_t seed,
                           ResamplerKind resampler, int workers, const std::string& label);

// Per-trajectory filter dump (traj, t, filtering_mean, log_step_weight_sum).
void dump_filter_csv(const ThetaStore& store, const LearnedModelConfig& mcfg,
                     std::span<const TrajectoryRecord> split, int particles,
                     ResamplerKind resampler, uint64_t seed, const std::string& path);

// --- estimator gradient bias (toy oracle) ---

enum class ToyTarget { filtering_mean, log_marginal, likelihood_log_marginal };
const char* toy_target_name(ToyTarget t);

struct BiasReport {
  std::vector<double> exact, est_mean, est_se, z;
  int runs = 0;
  double frac_within(double z_max) const;
  int worst_coord() const;
  void write_csv(const std::string& path) const;
};

BiasReport toy_gradient_bias(const ToyModel& toy, ToyTarget target, EstimatorMode mode,
                             int particles, int runs, uint64_t seed, int workers);

// All three targets from shared filter runs (the two state-mode targets reuse
// one forward pass per run with two backward sweeps).
struct ToyBiasBundle {
  BiasReport mean, logz, likz;
};
ToyBiasBundle toy_gradient_bias_all(const ToyModel& toy, EstimatorMode mode, int particles,
                                    int runs, uint64_t seed, int workers);

// Exact toy gradient for one target (enumeration oracle), flat in theta order.
std::vector<double> toy_exact_gradient(const ToyModel& toy, ToyTarget target);

// --- estimator variance comparison ---

struct VarianceCompareReport {
  std::vector<double> var_a, var_b;  // per-coordinate gradient variances
  double frac_a_le_b = 0.0;          // fraction of coordinates with var_a <= var_b
  int runs = 0;
  void write_csv(const std::string& path, const std::string& name_a,
                 const std::string& name_b) const;
};

// Gradient variance of the MSE loss under two estimator modes at identical
// per-run seeds, on one fixed trajectory and parameter set.
VarianceCompareReport estimator_variance_compare(const TrajectoryRecord& traj,
                                                 const LearnedModelConfig& mcfg,
                                                 EstimatorMode mode_a, EstimatorMode mode_b,
                                                 int particles, int runs, uint64_t seed,
                                                 int workers);

// --- timing ---

struct TimingReport {
  std::vector<std::pair<int, double>> train_step_seconds;  // (N, seconds per trajectory)
  double scaling_exponent = 0.0;  // log-log slope over the N grid
  double infer_seconds[3] = {0, 0, 0};  // per estimator mode, same forward path
  std::string summary() const;
  void write_csv(const std::string& path) const;
};

TimingReport benchmark_timing(const LearnedModelConfig& mcfg, uint64_t seed, int reps = 3);

// gradient of a single full filter+loss pass, used by timing and variance runs
std::vector<double> mse_gradient_once(const ThetaStore& store, const LearnedModelConfig& mcfg,
                                      const TrajectoryRecord& traj, const FilterConfig& fcfg,
                                      uint64_t run_seed);

}  // namespace dimmpf
