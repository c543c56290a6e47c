#pragma once

#include <cmath>
#include <cstdint>

// Counter-based random streams. Every draw is a pure function of
// (seed, tag, key0, key1, local counter), so results never depend on
// thread scheduling and the only state worth checkpointing is the
// logical counters (episode ids, iteration numbers) that key the streams.

namespace quadloco::rng {

enum class Tag : std::uint64_t {
  NetInit = 1,
  Terrain = 2,
  EnvReset = 3,
  Command = 4,
  ActionNoise = 5,
  AugNoise = 6,
  Shuffle = 7,
  Eval = 8,
  Probe = 9,
  Test = 10,
  HioSample = 11,
  Curriculum = 12,
  Push = 13,
};

inline std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash(std::uint64_t a, std::uint64_t b, std::uint64_t c,
                          std::uint64_t d) {
  std::uint64_t h = splitmix(a);
  h = splitmix(h ^ b);
  h = splitmix(h ^ c);
  h = splitmix(h ^ d);
  return h;
}

class Stream {
 public:
  Stream(std::uint64_t seed, Tag tag, std::uint64_t key0 = 0,
         std::uint64_t key1 = 0)
      : seed_(seed), tag_(static_cast<std::uint64_t>(tag)), key0_(key0),
        key1_(key1) {}

  std::uint64_t bits() {
    return hash(seed_, tag_ ^ (key0_ << 8), key1_, counter_++);
  }

  // [0, 1)
  double uniform() { return static_cast<double>(bits() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // [0, n)
  std::uint64_t integer(std::uint64_t n) {
    return n ? bits() % n : 0;  // modulo bias immaterial for our n << 2^64
  }

  // standard normal via Box-Muller; two fresh uniforms per draw, no cache
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::uint64_t seed_, tag_, key0_, key1_;
  std::uint64_t counter_ = 0;
};

}  // namespace quadloco::rng
