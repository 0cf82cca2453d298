#pragma once

#include <cstdint>
#include <vector>

namespace eqflow {

/// Mixes a 64-bit value with the SplitMix64 finalizer.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent seed for sub-task `stream` of a run seeded with `seed`.
/// Sub-task seeds depend only on (seed, stream), never on evaluation order.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

/// Counter-based generator: the k-th draw is splitmix64(key + k).
/// Output is identical on every platform, unlike the std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(splitmix64(seed)) {}

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, bound).
  std::size_t index(std::size_t bound) { return static_cast<std::size_t>(next_u64() % bound); }

  std::vector<double> uniform_vector(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = uniform(lo, hi);
    return v;
  }

  /// Child generator for a named sub-stream.
  Rng split(std::uint64_t stream) const { return Rng(derive_seed(key_, stream)); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace eqflow
