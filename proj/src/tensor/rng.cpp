#include "l2g/tensor/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace l2g {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : seed_(seed), stream_(stream), engine_(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)) {}

Rng Rng::derive(std::uint64_t stream_id) const {
  return Rng(seed_, splitmix64(stream_ * 0x100000001b3ULL + stream_id + 1));
}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

std::uint64_t Rng::below(std::uint64_t bound) {
  // 128-bit multiply-shift; bias is below 2^-64 * bound, irrelevant at our sizes.
  const unsigned __int128 wide = static_cast<unsigned __int128>(engine_()) * bound;
  return static_cast<std::uint64_t>(wide >> 64);
}

double Rng::normal(double mean, double stddev) {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + stddev * z;
}

std::vector<std::uint32_t> Rng::permutation(std::size_t n) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  shuffle(std::span<std::uint32_t>(p));
  return p;
}

}  // namespace l2g
