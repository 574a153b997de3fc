#include "normlab/rng.hpp"

#include <cmath>

namespace normlab {

namespace {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

uint64_t splitmix64(uint64_t& state) {
  state += kGolden;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t mix(uint64_t a, uint64_t b) {
  uint64_t s = a ^ (b + kGolden + (a << 6) + (a >> 2));
  return splitmix64(s);
}

}  // namespace

Rng::Rng(uint64_t seed) : state_(seed) {
  // burn one step so seed 0 does not start at the raw golden constant
  splitmix64(state_);
}

Rng Rng::fork(uint64_t label) const {
  Rng child(mix(state_, label));
  return child;
}

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform() {
  // 53 random bits into [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller, cache-free so draw order stays position-independent.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
  const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
  return lo + static_cast<int64_t>(next_u64() % span);
}

uint64_t seed_stream(uint64_t run_seed, uint64_t layer_index, uint64_t step_index) {
  return mix(mix(run_seed, 0x6c6179657200ULL + layer_index), 0x7374657000ULL + step_index);
}

}  // namespace normlab
