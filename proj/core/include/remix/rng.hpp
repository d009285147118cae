#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace remix {

// splitmix64 finalizer (Vigna). Used everywhere a 64-bit seed needs mixing.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stable per-bag seed: FNV-1a over the id folded into the global seed.
// Parallel and serial reduction derive identical streams from this.
inline uint64_t derive_seed(uint64_t global_seed, std::string_view bag_id) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bag_id) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return mix64(global_seed ^ h);
}

inline uint64_t derive_seed(uint64_t global_seed, uint64_t stream) {
  return mix64(global_seed ^ mix64(stream));
}

// mt19937_64 engine with hand-rolled uniform/normal draws. The engine's
// output sequence is pinned by the standard; std distributions are not,
// so we avoid them for reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return (eng_() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1) — never returns exactly 0
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  // uniform integer in [0, n)
  uint64_t uniform_int(uint64_t n) {
    uint64_t bound = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = eng_();
    } while (x >= bound);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Box-Muller, one deviate per call (the spare is discarded so that the
  // stream position is a pure function of the call count).
  double normal() {
    double u1 = uniform_open();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace remix
