#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace letac {

// Deterministic RNG with hand-rolled mappers. std::uniform_real_distribution
// and friends are implementation-defined, so output files would not be stable
// across standard libraries; these mappers pin the exact byte stream.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t raw() { return engine_(); }

  // Uniform double in [0, 1) with 53 bits of mantissa.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller without call-to-call caching, so the stream position is a pure
  // function of the number of draws.
  double normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Integer in [0, n). Modulo bias is negligible for n far below 2^64 but we
  // reject the tail anyway so the result is exactly uniform.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  // Derive an independent child stream; used to give each trial/frame its own
  // stream so record counts never shift unrelated draws.
  Rng fork() { return Rng(fork_seed()); }

  // A fresh seed decorrelated from this stream, advancing it by one draw.
  std::uint64_t fork_seed() { return engine_() ^ 0x9e3779b97f4a7c15ull; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace letac
