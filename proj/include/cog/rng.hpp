#pragma once

#include "cog/matrix.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace cog {

/// Counter-based generator: draws are a pure function of (seed, stream,
/// counter), so per-tensor initialization is independent of construction
/// order and reproducible across runs and platforms.
struct Rng {
    std::uint64_t seed = 0;
    std::uint64_t stream = 0;
};

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}
} // namespace detail

inline std::uint64_t rng_bits(const Rng& rng, std::uint64_t counter) {
    return detail::mix64(detail::mix64(detail::mix64(rng.seed) ^ rng.stream) ^ counter);
}

/// Uniform draw in (0, 1]; never 0, so log() stays finite.
inline double rng_unit(const Rng& rng, std::uint64_t counter) {
    return static_cast<double>((rng_bits(rng, counter) >> 11) + 1) * 0x1.0p-53;
}

/// i-th standard normal draw of the stream (Box-Muller, counters 2i, 2i+1).
inline double rng_normal(const Rng& rng, std::uint64_t i) {
    const double u1 = rng_unit(rng, 2 * i);
    const double u2 = rng_unit(rng, 2 * i + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Fixed substream id for a named tensor (FNV-1a).
inline std::uint64_t stream_of(std::string_view name) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 0x100000001B3ull;
    }
    return h;
}

/// i.i.d. zero-mean normal draws with standard deviation `stddev`.
template <typename Scalar>
Matrix<Scalar> randn(const Rng& rng, Index rows, Index cols, double stddev) {
    if (!(stddev > 0)) throw std::invalid_argument("randn: stddev must be > 0");
    Matrix<Scalar> out(rows, cols);
    std::uint64_t i = 0;
    for (Index r = 0; r < rows; ++r)
        for (Index c = 0; c < cols; ++c) out(r, c) = static_cast<Scalar>(stddev * rng_normal(rng, i++));
    return out;
}

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> random_permutation(const Rng& rng, std::size_t n) {
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    std::uint64_t counter = 0;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng_bits(rng, counter++) % i);
        std::swap(perm[i - 1], perm[j]);
    }
    return perm;
}

} // namespace cog
