#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace aat {

// All randomness in the toolkit flows through this generator so that a run is
// fully determined by one seed.  Distribution sampling is hand-rolled on
// purpose: std::*_distribution is implementation-defined, which would break
// bit reproducibility between standard libraries.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed of a named child stream.  Substreams decouple the consumers of
// randomness: drawing more numbers in one stream never shifts another.
inline std::uint64_t substream(std::uint64_t seed, std::string_view name,
                               std::uint64_t index = 0) {
  std::uint64_t s = seed;
  s ^= 0x632be59bd9b4e019ULL + fnv1a64(name);
  (void)splitmix64(s);
  s ^= 0xd1342543de82ef95ULL * (index + 1);
  (void)splitmix64(s);
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t u64() {
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform integer in [0, n) by rejection, bias-free.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const std::uint64_t r = u64();
      if (r >= threshold) return r % n;
    }
  }

  // Uniform double in [0, 1) with 53 random bits.
  double real() { return double(u64() >> 11) * 0x1.0p-53; }

  bool bernoulli(double p) { return real() < p; }

  // Box-Muller; the spare is cached so draws come in deterministic pairs.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = real();
    while (u1 <= 0.0) u1 = real();
    const double u2 = real();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  float normalf(float mean = 0.0f, float stddev = 1.0f) {
    return mean + stddev * float(normal());
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = std::size_t(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // k distinct values from [0, n), excluding anything in `excluded`
  // (which must be sorted).  Order of selection is preserved.
  std::vector<int> sample_distinct(int n, int k, const std::vector<int>& excluded);

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t s_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline std::vector<int> Rng::sample_distinct(int n, int k,
                                             const std::vector<int>& excluded) {
  std::vector<bool> taken(std::size_t(n), false);
  for (int e : excluded)
    if (e >= 0 && e < n) taken[std::size_t(e)] = true;
  std::vector<int> out;
  out.reserve(std::size_t(k));
  while (int(out.size()) < k) {
    const int c = int(below(std::uint64_t(n)));
    if (taken[std::size_t(c)]) continue;
    taken[std::size_t(c)] = true;
    out.push_back(c);
  }
  return out;
}

}  // namespace aat
