#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace bscat {

using Rng = std::mt19937_64;

/// Derives an independent seed for a named substream of `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream) noexcept;
std::uint64_t derive_seed(std::uint64_t seed, std::string_view stream, std::uint64_t index) noexcept;

inline Rng make_rng(std::uint64_t seed, std::string_view stream) {
    return Rng(derive_seed(seed, stream));
}

/// `k` distinct indices from [0, n) in draw order (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t n, std::size_t k);

}  // namespace bscat
