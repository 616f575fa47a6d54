#pragma once

// Seed splitting: every module draws from its own stream derived from the run
// seed and a module tag, so adding draws in one module never shifts another.

#include <cstdint>
#include <random>
#include <string_view>

namespace calypso {

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// splitmix64(seed ^ fnv1a(tag) ^ splitmix64(counter))
std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag, std::uint64_t counter = 0) noexcept;

inline std::mt19937_64 make_rng(std::uint64_t seed, std::string_view tag, std::uint64_t counter = 0) {
    return std::mt19937_64(derive_seed(seed, tag, counter));
}

} // namespace calypso
