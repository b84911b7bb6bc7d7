#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace metaprep {

// SplitMix64 finalizer.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Counter-based splittable random stream. The state is a (key, counter) pair;
// every draw is a pure function of both, so persisting the counter and key is
// enough to resume the stream exactly. Splitting derives an independent key
// from a label and starts a fresh counter. Streams are not shared across
// threads; give each worker its own split.
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t key, std::uint64_t counter) : key_(key), counter_(counter) {}

  static RngStream from_seed(std::uint64_t seed) { return RngStream(mix64(seed ^ 0x6d657461u), 0); }

  RngStream split(std::string_view label) const {
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (char c : label) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ull;
    }
    return RngStream(mix64(key_ ^ mix64(h)), 0);
  }

  RngStream split(std::uint64_t lane) const { return RngStream(mix64(key_ ^ mix64(lane ^ 0x51AEull)), 0); }

  std::uint64_t next_u64() { return mix64(key_ ^ mix64(counter_++)); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), n > 0. Fixed-point multiply keeps it branch-free
  // and platform-deterministic.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller. No cached spare: the state stays a pure
  // counter, which resume relies on.
  double normal() {
    double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal(0, stddev) truncated at bound_sigmas standard deviations.
  double truncated_normal(double stddev, double bound_sigmas = 2.0) {
    double z;
    do {
      z = normal();
    } while (std::fabs(z) > bound_sigmas);
    return z * stddev;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }
  void set_position(std::uint64_t counter) { counter_ = counter; }

 private:
  std::uint64_t key_{0};
  std::uint64_t counter_{0};
};

}  // namespace metaprep
