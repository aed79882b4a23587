#include "dimmpf/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dimmpf {

namespace {
std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}
}  // namespace

ConfigFile ConfigFile::parse(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str());
}

ConfigFile ConfigFile::parse_text(const std::string& text) {
  ConfigFile cf;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: expected key = value at line " + std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw std::runtime_error("config: empty key at line " + std::to_string(lineno));
    cf.kv_[section.empty() ? key : section + "." + key] = val;
  }
  return cf;
}

std::string ConfigFile::str(const std::string& key, const std::string& fallback) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? fallback : it->second;
}

double ConfigFile::num(const std::string& key, double fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw std::runtime_error("config: " + key + " is not a number: " + it->second);
  }
}

long ConfigFile::integer(const std::string& key, long fallback) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) return fallback;
  try {
    return std::stol(it->second);
  } catch (...) {
    throw std::runtime_error("config: " + key + " is not an integer: " + it->second);
  }
}

void RunConfig::load(const ConfigFile& cf) {
  if (cf.has("run.seed")) {
    seed = static_cast<uint64_t>(cf.integer("run.seed", 0));
    seed_set = true;
  }
  env = parse_env(cf.str("run.env", env_name(env)));
  out_dir = cf.str("run.out_dir", out_dir);
  data_dir = cf.str("run.data_dir", data_dir);
  workers = static_cast<int>(cf.integer("run.workers", workers));

  n_traj = static_cast<int>(cf.integer("dataset.n_traj", n_traj));
  T = static_cast<int>(cf.integer("dataset.T", T));

  eval_particles = static_cast<int>(cf.integer("filter.particles", eval_particles));
  mode = parse_mode(cf.str("filter.mode", mode_name(mode)));
  resampler = parse_resampler(cf.str("filter.resampler", resampler_name(resampler)));

  train.particles = static_cast<int>(cf.integer("training.particles", train.particles));
  train.batch_size = static_cast<int>(cf.integer("training.batch", train.batch_size));
  train.epochs = static_cast<int>(cf.integer("training.epochs", train.epochs));
  train.lambda = cf.num("training.lambda", train.lambda);
  train.lr = cf.num("training.lr", train.lr);
  train.clip = cf.num("training.clip", train.clip);

  model.sw.d_r = static_cast<int>(cf.integer("model.d_r", model.sw.d_r));
  model.sw.d_h = static_cast<int>(cf.integer("model.d_h", model.sw.d_h));
  model.nets.hidden = static_cast<int>(cf.integer("model.hidden", model.nets.hidden));
}

}  // namespace dimmpf
