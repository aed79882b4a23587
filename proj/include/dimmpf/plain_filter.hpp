#pragma once

#include <span>
#include <vector>

#include "dimmpf/filter_types.hpp"
#include "dimmpf/model.hpp"

namespace dimmpf {

// Non-differentiable forward filter over plain doubles. Follows exactly the
// same sampling protocol as the tape filter (per-step: presample, resampling
// draws, propagation draws, all in particle order), so the two produce
// identical trajectories from identical streams. The estimator mode does not
// change forward values; inference always runs this O(N) path.
struct PlainFilterOutput {
  std::vector<double> mean;      // filtering mean per step
  std::vector<double> log_wsum;  // calibrated log sum of unnormalized weights
  // optionally retained final ensemble
  std::vector<double> final_x;
  std::vector<int> final_k;
  std::vector<double> final_wbar;

  void set_n(int n) { final_n_ = n; }
  double log_marginal() const;  // sum log_wsum - (T+1) log N
  double mse(std::span<const double> truth) const;

 private:
  int final_n_ = 1;
};

PlainFilterOutput run_plain_filter(const PlainModel& model, std::span<const double> obs,
                                   const FilterConfig& cfg, RandomStream& rng,
                                   bool keep_final = false);

}  // namespace dimmpf
