#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace bao {

// Counter-based generator: output i is a hash of (key, i), so draws are a
// pure function of the stream key and position.  Streams for replicates,
// bootstrap resamples, and individual DGP variables are derived by mixing
// tags into the key, which keeps parallel workers reproducible regardless
// of scheduling.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(mix(seed ^ kSalt)) {}

  // Child stream whose draws are independent of this stream's position.
  RngStream child(std::uint64_t tag) const {
    RngStream s(0);
    s.key_ = mix(key_ ^ mix(tag + kSalt));
    return s;
  }
  RngStream child(std::string_view tag) const { return child(fnv1a(tag)); }

  std::uint64_t next_u64() { return mix(key_ + (++counter_) * kGamma); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; u1 shifted into (0, 1] so the log is finite.
  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }

  // Index in [0, n).
  std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

  static std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ull;
    }
    return h;
  }

 private:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;
  static constexpr std::uint64_t kSalt = 0x5bf03635f0935ad1ull;

  static std::uint64_t mix(std::uint64_t x) {
    x += kGamma;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace bao
