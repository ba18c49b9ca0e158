#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace kgsal {

// Deterministic, platform-independent PRNG (splitmix64 core).
// Substreams are derived from the original seed, not the advancing state,
// so sub("x", i) yields the same stream no matter how much the parent
// has already been consumed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), state_(seed) {}

  uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1)
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [0, n), n > 0
  int next_int(int n) {
    return static_cast<int>((static_cast<__uint128_t>(next_u64()) *
                             static_cast<uint64_t>(n)) >> 64);
  }

  double next_normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = next_unit();
    double u2 = next_unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double next_normal(double mean, double stddev) { return mean + stddev * next_normal(); }

  bool next_bool(double p_true) { return next_unit() < p_true; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(next_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  Rng sub(std::string_view label, uint64_t index = 0) const {
    uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001B3ULL;
    }
    h ^= index + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    uint64_t s = seed_ ^ h;
    s += 0x9E3779B97F4A7C15ULL;
    s = (s ^ (s >> 30)) * 0xBF58476D1CE4E5B9ULL;
    s = (s ^ (s >> 27)) * 0x94D049BB133111EBULL;
    return Rng(s ^ (s >> 31));
  }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace kgsal
