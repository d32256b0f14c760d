#pragma once

#include <cmath>
#include <cstdint>

namespace trkp {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Counter-based generator: the n-th draw is a pure function of
// (seed, stream, n). Substreams generated in parallel therefore match
// serial generation bit for bit.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(splitmix64(splitmix64(seed) ^
                        0x5851f42d4c957f2dull * (stream + 1))) {}

  std::uint64_t next_u64() {
    return splitmix64(key_ + 0x9e3779b97f4a7c15ull * ++counter_);
  }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // uniform in [lo, hi)
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n)
  std::uint32_t next_below(std::uint32_t n) {
    return static_cast<std::uint32_t>(next_u64() % n);
  }

  // standard normal via Box-Muller
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - next_double();  // (0, 1]
    const double u2 = next_double();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    have_spare_ = true;
    return r * std::cos(t);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Stable stream ids used to derive independent substreams from one seed.
namespace rng_stream {
constexpr std::uint64_t kSceneBase = 1000;      // + scene index
constexpr std::uint64_t kModelInit = 2;
constexpr std::uint64_t kShuffleBase = 3000;    // + epoch
constexpr std::uint64_t kDomainBase = 4000;     // + domain index
constexpr std::uint64_t kMixtureBase = 1u << 20;  // + scene index
}  // namespace rng_stream

}  // namespace trkp
