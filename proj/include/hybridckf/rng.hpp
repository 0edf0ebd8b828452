#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace hybridckf {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Seed-splitting rule used everywhere a substream is needed:
//   derive_seed(base, tag, a, b) = sm(sm(sm(base ^ fnv1a64(tag)) ^ a) ^ b)
// with sm = splitmix64. Substreams are keyed by a string tag plus up to two
// integer indices (e.g. SNR index and run index), so no global RNG state
// exists anywhere in the program.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(base ^ fnv1a64(tag));
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

// Deterministic standard-normal stream (mt19937_64 + Box-Muller). The seed is
// pre-scrambled so that adjacent seeds give unrelated streams.
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : gen_(splitmix64(seed)) {}

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double next() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform in [lo, hi).
  double uniform_in(double lo, double hi) { return lo + uniform() * (hi - lo); }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace hybridckf
