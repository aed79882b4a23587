#pragma once

#include <optional>
#include <string>

#include "dimmpf/env_sim.hpp"
#include "dimmpf/learned_model.hpp"
#include "dimmpf/tape_filter.hpp"

namespace dimmpf {

// --- losses (built on the trajectory's tape) ---

// (1/(T+1)) sum_t (filtering_mean_t - truth_t)^2
Var mse_loss(Tape& t, std::span<const Var> means, std::span<const double> truth);

// -Z_T = (T+1) log N - sum_t log sum_n w_t^n
Var data_likelihood_loss(Tape& t, std::span<const Var> log_wsum, int particles);

Var combined_loss(Tape& t, Var mse, Var datalik, double lambda);

// --- optimizer ---

// Adaptive-moment gradient descent with bias-corrected first/second moments.
struct AdamOptimizer {
  double lr = 1e-2, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

  void step(ThetaStore& store, std::span<const double> grad);

 private:
  std::vector<double> m_, v_;
  long steps_ = 0;
};

// Scales grad in place so its global L2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_global_norm(std::span<double> grad, double max_norm);

// --- training loop ---

struct TrainConfig {
  int particles = 200;
  int batch_size = 100;
  int epochs = 50;
  double lambda = 0.1;
  double lr = 1e-2;
  double clip = 10.0;
  EstimatorMode mode = EstimatorMode::rao_blackwellised;
  ResamplerKind resampler = ResamplerKind::systematic;
  uint64_t seed = 0;
  int workers = 0;        // 0: hardware concurrency
  std::string out_dir;    // when set: training log CSV + checkpoints
};

struct TrainLogRow {
  int epoch, batch;
  double loss, mse, datalik, grad_norm;
  double val_mse;  // NaN except on each epoch's closing row
};

struct TrainResult {
  ThetaStore best_theta;
  double best_val_mse = 0.0;
  int best_epoch = -1;
  double final_val_mse = 0.0;
  std::vector<TrainLogRow> log;
  int optimizer_steps = 0;
  int skipped_steps = 0;
};

TrainResult train(const Dataset& data, const LearnedModelConfig& mcfg, const TrainConfig& cfg);

// Mean per-trajectory MSE of the plain (inference) filter over a split.
double dataset_mse(const ThetaStore& store, const LearnedModelConfig& mcfg,
                   std::span<const TrajectoryRecord> split, int particles,
                   ResamplerKind resampler, uint64_t seed, const std::string& stream_tag,
                   int workers);

}  // namespace dimmpf
