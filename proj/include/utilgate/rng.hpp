#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace utilgate {

/// splitmix64 finalizer; a bijection on 64-bit integers.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGoldenGamma = 0x9e3779b97f4a7c15ull;

/// The k-th 64-bit output of a splitmix64 generator seeded with `seed`.
constexpr std::uint64_t counter_bits(std::uint64_t seed, std::uint64_t k) noexcept {
  return mix64(seed + (k + 1) * kGoldenGamma);
}

/// Uniform double in the open interval (0, 1) from the top 53 bits.
constexpr double counter_uniform(std::uint64_t seed, std::uint64_t k) noexcept {
  return (static_cast<double>(counter_bits(seed, k) >> 11) + 0.5) * 0x1.0p-53;
}

/// The k-th standard normal draw for `seed`.
///
/// Box-Muller over the uniform pair (2k, 2k+1), cosine branch only, so every
/// draw depends on its own index and nothing else.
double gaussian_at(std::uint64_t seed, std::uint64_t k) noexcept;

/// Counter-addressed Gaussian stream. Draw k is a pure function of (seed, k),
/// so disjoint ranges can be produced by different threads in any order.
class NoiseStream {
public:
  explicit NoiseStream(std::uint64_t seed, std::uint64_t counter = 0) noexcept
      : seed_(seed), counter_(counter) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  double at(std::uint64_t k) const noexcept { return gaussian_at(seed_, k); }

  // Fills `out` with draws [counter, counter + out.size()) and advances the counter.
  void fill(std::span<double> out) noexcept;

private:
  std::uint64_t seed_;
  std::uint64_t counter_;
};

std::vector<double> gaussian_draw(NoiseStream& stream, std::size_t count);

} // namespace utilgate
