#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace editlab {

// splitmix64; used to derive substream seeds and content hashes.
inline uint64_t hash_mix(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return hash_mix(a ^ (0x9e3779b97f4a7c15ULL + b + (a << 6) + (a >> 2)));
}

// Deterministic RNG. Distributions are hand-rolled because the standard
// library's distribution objects are not bit-stable across implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  static Rng fork(uint64_t seed, uint64_t stream, uint64_t index = 0) {
    return Rng(hash_combine(hash_combine(seed, stream), index));
  }

  uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    return n == 0 ? 0 : next_u64() % n;
  }

  // Box-Muller; consumes two uniforms per call.
  double normal(double mean = 0.0, double stddev = 1.0) {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    return mean + stddev * z;
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace editlab
