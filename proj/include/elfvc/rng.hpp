#pragma once

// Portable random source.  mt19937_64 is bit-exact by the C++ standard, and
// the uniform/normal transforms below avoid std::distribution classes whose
// algorithms are implementation-defined.  Same seed => same stream everywhere.

#include <cstdint>
#include <random>

namespace elfvc {

uint64_t splitmix64(uint64_t x);

class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), gen_(splitmix64(seed)) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range, rejection-sampled (no modulo bias).
  int64_t uniform_int(int64_t lo, int64_t hi);

  // Standard normal via the Marsaglia polar method (det_log inside).
  double normal();
  double normal(double mean, double sd) { return mean + sd * normal(); }

  // Independent child stream; `stream` tells siblings apart.
  Rng fork(uint64_t stream) const {
    return Rng(splitmix64(seed_ ^ (0x9e3779b97f4a7c15ull * (stream + 1))));
  }

 private:
  uint64_t seed_;
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace elfvc
