#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace dimmpf {

inline uint64_t splitmix64(uint64_t& s) {
  uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// xoshiro256++ with named sub-stream derivation. Every consumer of randomness
// derives its own stream from (root seed, tag, indices), so results do not
// depend on thread scheduling or on how much randomness sibling tasks consume.
class RandomStream {
 public:
  RandomStream() : RandomStream(0) {}
  explicit RandomStream(uint64_t seed) {
    uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  static uint64_t derive_seed(uint64_t root, std::string_view tag, uint64_t a = 0,
                              uint64_t b = 0) {
    uint64_t h = root ^ 0x6a09e667f3bcc909ULL;
    for (char c : tag) {
      h ^= static_cast<uint64_t>(static_cast<unsigned char>(c));
      splitmix64(h);
    }
    h ^= a * 0x9e3779b97f4a7c15ULL;
    splitmix64(h);
    h ^= b * 0xd1342543de82ef95ULL;
    splitmix64(h);
    return h;
  }

  static RandomStream derived(uint64_t root, std::string_view tag, uint64_t a = 0,
                              uint64_t b = 0) {
    return RandomStream(derive_seed(root, tag, a, b));
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // (0, 1]
  double uniform_pos() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  // Box-Muller; consumes exactly two draws per call (no cached spare, so the
  // draw sequence is a pure function of the call sequence).
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Index draw from unnormalized nonnegative weights summing to `total`.
  int categorical(const double* w, int n, double total) {
    double u = uniform() * total;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += w[i];
      if (u < acc) return i;
    }
    return n - 1;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t s_[4];
};

}  // namespace dimmpf
