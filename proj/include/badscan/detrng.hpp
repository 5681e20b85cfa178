#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace badscan::rng {

// SplitMix64 finalizer used as a keyed mixing function. All randomness in
// this project is counter-based: a draw is a pure function of
// (seed, stream path, counter), so results are reproducible across
// platforms and independent of call order.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

class Stream {
 public:
  explicit Stream(std::uint64_t seed) : key_(mix64(seed ^ 0xb5ad4eceda1ce2a9ULL)) {}

  // Derived stream for a sub-component (group index, tensor index, ...).
  Stream sub(std::uint64_t s) const {
    Stream out(Raw{}, mix64(key_ ^ mix64(s ^ 0x2545f4914f6cdd1dULL)));
    return out;
  }

  std::uint64_t bits(std::uint64_t counter) const {
    return mix64(key_ ^ mix64(counter ^ 0x9e6c63d0876a9a47ULL));
  }

  // Uniform in [0, 1) with 53 random bits.
  double unit(std::uint64_t counter) const {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n). Multiply-shift keeps this exact and portable.
  std::uint64_t below(std::uint64_t counter, std::uint64_t n) const {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(bits(counter)) * n) >> 64);
  }

 private:
  struct Raw {};
  Stream(Raw, std::uint64_t key) : key_(key) {}
  std::uint64_t key_;
};

// Stateful convenience wrapper: a Stream plus an incrementing counter.
class Sequence {
 public:
  explicit Sequence(Stream s) : stream_(s) {}
  explicit Sequence(std::uint64_t seed) : stream_(Stream(seed)) {}

  std::uint64_t u64() { return stream_.bits(counter_++); }
  double unit() { return stream_.unit(counter_++); }
  std::uint64_t below(std::uint64_t n) { return stream_.below(counter_++, n); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Box-Muller; consumes two counters per call.
  double normal() {
    double u1 = unit();
    double u2 = unit();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  Stream stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace badscan::rng
