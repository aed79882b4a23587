#pragma once

#include <stdexcept>
#include <string>

namespace dimmpf {

enum class EstimatorMode : uint8_t { rao_blackwellised, naive, detached };
enum class ResamplerKind : uint8_t { multinomial, systematic };

const char* mode_name(EstimatorMode m);
EstimatorMode parse_mode(const std::string& s);
const char* resampler_name(ResamplerKind r);
ResamplerKind parse_resampler(const std::string& s);

struct FilterConfig {
  int particles = 200;
  EstimatorMode mode = EstimatorMode::rao_blackwellised;
  ResamplerKind resampler = ResamplerKind::systematic;
};

struct FilterFailure : std::runtime_error {
  explicit FilterFailure(const std::string& what, int step)
      : std::runtime_error(what + " at step " + std::to_string(step)), step(step) {}
  int step;
};

}  // namespace dimmpf
