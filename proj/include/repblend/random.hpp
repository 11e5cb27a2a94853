#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace repblend {

using Rng = std::mt19937_64;

// Independent stream for one stochastic site, keyed by a fixed label so that
// toggling one component never shifts another component's draws.
Rng derive_stream(std::uint64_t base_seed, std::string_view label);

// Uniform integer in [0, n). Rejection sampling on raw engine output keeps
// the sequence identical across standard library implementations.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);

// Uniform real in [0, 1) from the top 53 bits.
double uniform_unit(Rng& rng);

// Standard normal via Box-Muller (one value per call, second discarded).
double standard_normal(Rng& rng);

}  // namespace repblend
