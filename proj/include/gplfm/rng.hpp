#pragma once

#include <cstdint>
#include <random>

namespace gplfm {

// splitmix64; used to derive independent substream seeds from (seed, index).
uint64_t mix_seed(uint64_t seed, uint64_t index);

// Deterministic random stream: mt19937_64 engine with explicit bit-to-double
// mappings so results are identical across standard library implementations.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1) with 53-bit resolution
  double uniform();

  // uniform in [lo, hi)
  double uniform(double lo, double hi);

  // log-uniform on [lo, hi], lo > 0
  double log_uniform(double lo, double hi);

  // standard normal via Box-Muller (cached second deviate)
  double gaussian();

  // integer in [0, n)
  uint64_t below(uint64_t n);

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace gplfm
