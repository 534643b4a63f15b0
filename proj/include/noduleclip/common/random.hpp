#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace noduleclip {

// Seeded generator used everywhere randomness is needed. All derived draws
// (uniform doubles, bounded integers, normals) are computed here from raw
// 64-bit engine output rather than through std:: distributions, so streams
// are identical across standard library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n) by rejection. n must be positive.
  std::uint64_t index(std::uint64_t n);

  // Box-Muller; one engine pair per call, no cached spare.
  double normal(double mean = 0.0, double stddev = 1.0);

  bool bernoulli(double p) { return uniform() < p; }

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// Hash-derived child seed, used to give each (epoch, step, slot) or bootstrap
// draw an independent stream.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> path);

// Fisher-Yates, drawing swap indices from the front of the vector backwards.
template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.index(i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace noduleclip
