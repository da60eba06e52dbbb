#include "lrlgf/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "lrlgf/errors.hpp"

namespace lrlgf {

uint64_t SplitMix64::next_below(uint64_t n) {
  if (n == 0) throw contract_violation("next_below: n must be positive");
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % n;
}

double SplitMix64::next_normal() {
  if (have_cached_) {
    have_cached_ = false;
    return cached_;
  }
  double u1 = next_double();
  while (u1 <= 0.0) u1 = next_double();
  double u2 = next_double();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * std::numbers::pi * u2;
  cached_ = r * std::sin(a);
  have_cached_ = true;
  return r * std::cos(a);
}

uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  SplitMix64 g(seed ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
  return g.next_u64();
}

std::vector<uint32_t> random_permutation(uint32_t n, uint64_t seed) {
  std::vector<uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  SplitMix64 g(seed);
  g.shuffle(p);
  return p;
}

std::vector<uint32_t> sample_without_replacement(uint32_t n, uint32_t count, uint64_t seed) {
  if (count > n) throw contract_violation("sample_without_replacement: count > n");
  // Partial Fisher-Yates over 0..n-1; only the first `count` slots matter.
  std::vector<uint32_t> pool(n);
  std::iota(pool.begin(), pool.end(), 0u);
  SplitMix64 g(seed);
  std::vector<uint32_t> out(count);
  for (uint32_t i = 0; i < count; ++i) {
    uint32_t j = i + static_cast<uint32_t>(g.next_below(n - i));
    std::swap(pool[i], pool[j]);
    out[i] = pool[i];
  }
  return out;
}

}  // namespace lrlgf
