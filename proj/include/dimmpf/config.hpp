#pragma once

#include <map>
#include <optional>
#include <string>

#include "dimmpf/env_sim.hpp"
#include "dimmpf/filter_types.hpp"
#include "dimmpf/learned_model.hpp"
#include "dimmpf/training.hpp"

namespace dimmpf {

// Flat "key = value" config with [section] headers; lookups are
// "section.key". Flags override config values; all randomness flows from the
// single seed via named sub-streams.
class ConfigFile {
 public:
  static ConfigFile parse(const std::string& path);
  static ConfigFile parse_text(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) > 0; }
  std::string str(const std::string& key, const std::string& fallback) const;
  double num(const std::string& key, double fallback) const;
  long integer(const std::string& key, long fallback) const;

 private:
  std::map<std::string, std::string> kv_;
};

struct RunConfig {
  uint64_t seed = 0;
  bool seed_set = false;
  EnvKind env = EnvKind::markov;
  std::string out_dir = "out";
  std::string data_dir;
  int workers = 0;

  int n_traj = 2000;
  int T = 50;

  int eval_particles = 2000;
  EstimatorMode mode = EstimatorMode::rao_blackwellised;
  ResamplerKind resampler = ResamplerKind::systematic;

  TrainConfig train;
  LearnedModelConfig model;

  void load(const ConfigFile& cf);
};

}  // namespace dimmpf
