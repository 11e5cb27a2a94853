#include "repblend/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace repblend {

Rng derive_stream(std::uint64_t base_seed, std::string_view label) {
  std::vector<std::uint32_t> material;
  material.push_back(static_cast<std::uint32_t>(base_seed & 0xffffffffu));
  material.push_back(static_cast<std::uint32_t>(base_seed >> 32));
  for (char ch : label) material.push_back(static_cast<unsigned char>(ch));
  std::seed_seq seq(material.begin(), material.end());
  return Rng(seq);
}

std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: empty range");
  const std::uint64_t limit = Rng::max() - (Rng::max() % n);
  std::uint64_t draw = rng();
  while (draw >= limit) draw = rng();
  return draw % n;
}

double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double standard_normal(Rng& rng) {
  double u1 = uniform_unit(rng);
  while (u1 <= 0.0) u1 = uniform_unit(rng);
  const double u2 = uniform_unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace repblend
