#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace ehd {

// Stateless 64-bit mixer. All derived seeds in the project flow through this
// so that parallel corruption / dropout streams are reproducible regardless
// of scheduling.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_seed(uint64_t a, uint64_t b) {
  return splitmix64(a ^ splitmix64(b + 0x9e3779b97f4a7c15ULL));
}

inline uint64_t hash_seed(uint64_t a, uint64_t b, uint64_t c) {
  return hash_seed(hash_seed(a, b), c);
}

inline uint64_t hash_seed(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
  return hash_seed(hash_seed(a, b, c), d);
}

// Deterministic RNG. mt19937_64's output sequence is pinned by the standard;
// every distribution below is hand-rolled because the std:: distributions are
// implementation-defined and would break bit-identical reruns across stdlibs.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // [0, n). Modulo bias is < n / 2^64, irrelevant at our n.
  size_t uniform_int(size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::uniform_int: n == 0");
    return static_cast<size_t>(next_u64() % n);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Box-Muller, no caching: two uniforms per draw keeps the stream layout
  // trivial to reason about.
  double normal() {
    const double u1 = 1.0 - uniform01();  // (0, 1]
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * 3.141592653589793238462643383279502884 * u2);
  }

  // Index sampled proportionally to probs (need not be normalized exactly).
  template <typename S>
  size_t categorical(std::span<const S> probs) {
    if (probs.empty()) throw std::invalid_argument("Rng::categorical: empty");
    double total = 0.0;
    for (S p : probs) total += static_cast<double>(p);
    double u = uniform01() * total;
    double cum = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
      cum += static_cast<double>(probs[i]);
      if (u < cum) return i;
    }
    return probs.size() - 1;
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace ehd
