#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace phytnet {

// splitmix64 step; used both as a mixer for seed derivation and to expand
// a single seed into generator state.
inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Derive a child seed from a base seed and a tag path. Every RNG stream in
// the toolkit is created this way from the single run seed, so streams are
// independent of each other and of consumption order elsewhere.
inline uint64_t derive_seed_span(uint64_t base, const uint64_t* words, size_t n) {
  uint64_t s = base;
  splitmix64(s);
  for (size_t i = 0; i < n; ++i) {
    s ^= words[i] + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    splitmix64(s);
  }
  uint64_t t = s;
  return splitmix64(t);
}

inline uint64_t derive_seed(uint64_t base, std::initializer_list<uint64_t> words) {
  return derive_seed_span(base, words.begin(), words.size());
}

inline uint64_t tag_hash(std::string_view tag) {
  // FNV-1a
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t derive_seed(uint64_t base, std::string_view tag,
                            std::initializer_list<uint64_t> words = {}) {
  uint64_t s = derive_seed(base, {tag_hash(tag)});
  return words.size() == 0 ? s : derive_seed(s, words);
}

// Seeded generator with hand-rolled distributions so that draws are
// identical across standard library implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // Rejection sampling over the top multiple of span.
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return lo + static_cast<int64_t>(x % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    cached_ = r * std::sin(6.283185307179586 * u2);
    has_cached_ = true;
    return r * std::cos(6.283185307179586 * u2);
  }

 private:
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace phytnet
