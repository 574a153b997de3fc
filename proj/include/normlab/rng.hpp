#pragma once

#include <cstdint>

namespace normlab {

// Deterministic splittable RNG. A stream is identified by a root seed plus
// any number of mixed-in labels; equal labels give bit-identical draws on
// every platform (no std::normal_distribution, whose output is
// implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed);

  // Derives an independent stream: hash-combines the label into the state.
  Rng fork(uint64_t label) const;

  uint64_t next_u64();
  double uniform();                         // [0, 1)
  double uniform(double lo, double hi);     // [lo, hi)
  double normal();                          // standard normal (Box-Muller, no cache)
  int64_t uniform_int(int64_t lo, int64_t hi);  // inclusive bounds

  uint64_t state() const { return state_; }

 private:
  uint64_t state_;
};

// Stream identifier for per-layer, per-step randomness.
uint64_t seed_stream(uint64_t run_seed, uint64_t layer_index, uint64_t step_index);

}  // namespace normlab
