#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace fedproxy {

// splitmix64 step (Vigna). Used both as the stream generator and as the
// seed-derivation mixer so runs reproduce bit-for-bit across machines.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over a string tag, folded into the seed-derivation chain.
inline std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed hierarchy: every consumer seed is derive_seed(parent, tag, index...).
// Mixing is one splitmix64 step per component, so unrelated streams never
// collide and the derivation is order-sensitive.
inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag) {
  std::uint64_t s = parent ^ hash_tag(tag);
  return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag,
                                 std::uint64_t index) {
  std::uint64_t s = derive_seed(parent, tag) ^ (index * 0x9e3779b97f4a7c15ULL + 1);
  return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t parent, std::string_view tag,
                                 std::uint64_t i, std::uint64_t j) {
  return derive_seed(derive_seed(parent, tag, i), tag, j);
}

// Deterministic generator. std::normal_distribution is implementation
// defined, so uniforms and gaussians are built by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() { return splitmix64(state_); }

  // uniform in [0,1) with 53 random bits
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Box-Muller with a cached spare.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    // avoid log(0)
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  // unbiased integer in [0, n)
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) return 0;
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = next_u64();
    while (v >= limit) v = next_u64();
    return v % n;
  }

 private:
  std::uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fedproxy
