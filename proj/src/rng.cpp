#include "kge/rng.hpp"

#include <cmath>
#include <numbers>

namespace kge {
namespace {

constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, only used to key named streams.
std::uint64_t hash_name(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : name) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngState RngState::stream(std::uint64_t seed, std::string_view name) {
  return RngState(mix(seed ^ mix(hash_name(name))));
}

std::uint64_t RngState::next_u64() {
  ++counter_;
  return mix(seed_ + counter_ * kGamma);
}

double RngState::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double RngState::normal(double mean, double stddev) {
  // Box-Muller, cosine branch only: two uniforms per draw.
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double radius = std::sqrt(-2.0 * std::log(u1));
  return mean + stddev * radius * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngState::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % bound;
}

}  // namespace kge
