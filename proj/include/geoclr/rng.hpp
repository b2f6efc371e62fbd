#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace geoclr {

/// Seeded random source. All draws go through the raw 64-bit engine so that
/// sequences are identical across standard library implementations, and no
/// draw caches state outside the engine (saving `state()` is sufficient to
/// resume a stream exactly).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  /// Independent stream derived from a base seed; distinct ids give
  /// decorrelated engines.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  /// Uniform double in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_int(std::size_t n);
  /// Standard normal via Box-Muller; consumes exactly two uniforms.
  double normal();
  /// Consumes exactly one uniform regardless of p.
  bool bernoulli(double p);

  std::uint64_t next_u64() { return engine_(); }

  std::string state() const;
  void set_state(const std::string& text);

  bool operator==(const Rng& other) const { return engine_ == other.engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace geoclr
