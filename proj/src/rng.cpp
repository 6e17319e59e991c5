#include "utilgate/rng.hpp"

#include <cmath>
#include <numbers>

namespace utilgate {

double gaussian_at(std::uint64_t seed, std::uint64_t k) noexcept {
  const double u1 = counter_uniform(seed, 2 * k);
  const double u2 = counter_uniform(seed, 2 * k + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void NoiseStream::fill(std::span<double> out) noexcept {
  for (auto& v : out) v = gaussian_at(seed_, counter_++);
}

std::vector<double> gaussian_draw(NoiseStream& stream, std::size_t count) {
  std::vector<double> out(count);
  stream.fill(out);
  return out;
}

} // namespace utilgate
