#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <vector>

namespace lracv {

// Counter-based generator: the k-th output is a SplitMix64-style hash of
// (key + k * golden_gamma), where the key is derived from (seed, stream).
// Every random draw in the library is keyed by an explicit seed, so any
// dataset, sketch, or baseline run is reproducible from its recorded seeds.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(mix(seed + kGamma) ^ mix(stream + 0x1d8af066a8f6cf1cULL)), counter_(0) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + (++counter_) * kGamma); }

  void discard(unsigned long long n) { counter_ += n; }

 private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

  static std::uint64_t mix(std::uint64_t x) {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

// Unbiased draw from [0, bound) via rejection sampling; independent of any
// standard-library distribution implementation.
inline std::uint64_t uniform_below(CounterRng& rng, std::uint64_t bound) {
  const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
  const std::uint64_t limit = max - max % bound;
  for (;;) {
    const std::uint64_t u = rng();
    if (u < limit) return u % bound;
  }
}

// k indices sampled without replacement from [0, n), ascending order.
inline std::vector<std::int64_t> sample_without_replacement(std::int64_t n, std::int64_t k,
                                                            CounterRng& rng) {
  if (k > n) k = n;
  std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
  std::iota(pool.begin(), pool.end(), std::int64_t{0});
  for (std::int64_t i = 0; i < k; ++i) {
    const std::uint64_t j =
        i + uniform_below(rng, static_cast<std::uint64_t>(n - i));
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace lracv
