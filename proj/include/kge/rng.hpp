#pragma once

#include <cstdint>
#include <string_view>

namespace kge {

// Counter-based generator (SplitMix64 over seed + counter * golden gamma).
// The whole state is two integers, so it serializes trivially and every
// distribution below is defined here rather than by the standard library,
// keeping draw sequences identical across platforms.
class RngState {
 public:
  RngState() = default;
  explicit RngState(std::uint64_t seed, std::uint64_t counter = 0) : seed_(seed), counter_(counter) {}

  // Independent stream keyed by name, e.g. RngState::stream(seed, "dropout").
  static RngState stream(std::uint64_t seed, std::string_view name);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal(double mean = 0.0, double stddev = 1.0);
  // Uniform integer in [0, bound), unbiased.
  std::uint64_t below(std::uint64_t bound);

  bool operator==(const RngState&) const = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace kge
