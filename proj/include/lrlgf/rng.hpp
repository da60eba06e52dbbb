#pragma once

#include <cstdint>
#include <vector>

namespace lrlgf {

// splitmix64, the project-wide deterministic generator. Every shuffle,
// initialization and subsampling in the library draws from this stream so
// that independent implementations can reproduce runs bit for bit.
//
// State update: s += 0x9e3779b97f4a7c15; output mixes s with two
// multiply-xorshift rounds (constants 0xbf58476d1ce4e5b9, 0x94d049bb133111eb).
// Doubles are (u64 >> 11) * 2^-53, uniform in [0, 1).
class SplitMix64 {
 public:
  explicit SplitMix64(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Integer in [0, n), rejection-sampled to avoid modulo bias. n > 0.
  uint64_t next_below(uint64_t n);

  // Standard normal via Box-Muller; consumes two uniforms per pair.
  double next_normal();

  // In-place Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

// Derives a decorrelated stream seed from (seed, salt). Used for per-task and
// per-epoch streams.
uint64_t mix_seed(uint64_t seed, uint64_t salt);

// Uniform random permutation of 0..n-1.
std::vector<uint32_t> random_permutation(uint32_t n, uint64_t seed);

// `count` distinct indices drawn from 0..n-1, in draw order.
std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t count, uint64_t seed);

}  // namespace lrlgf
