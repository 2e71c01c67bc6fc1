#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace l2g {

/// Seeded random source.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the C++
/// standard. The engine seed is splitmix64(seed) mixed with splitmix64(stream),
/// so (seed, stream) pairs give independent sub-streams. Distributions are
/// implemented here rather than with <random> adaptors, whose algorithms are
/// implementation-defined: uniform() takes the top 53 bits, normal() is
/// Box-Muller without caching, and shuffle() is Fisher-Yates drawing with
/// rejection-free multiply-shift bounds.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Independent generator for a named sub-stream of this generator's seed.
  Rng derive(std::uint64_t stream_id) const;

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  double normal(double mean = 0.0, double stddev = 1.0);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

  /// Random permutation of 0..n-1.
  std::vector<std::uint32_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace l2g
