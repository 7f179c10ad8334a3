#pragma once

// Portable draws: results depend only on the mt19937_64 stream, never on the
// standard library's distribution implementations.

#include <cstdint>
#include <limits>
#include <random>
#include <utility>

namespace tunedetect {

/// Uniform double in [0, 1) from the top 53 bits of one engine draw.
inline double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Uniform integer in [0, bound) by rejection.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t max = std::numeric_limits<std::uint64_t>::max();
    const std::uint64_t limit = max - max % bound;
    std::uint64_t r;
    do r = rng(); while (r >= limit);
    return r % bound;
}

/// Fisher-Yates.
template <class V>
void shuffle_in_place(V& v, std::mt19937_64& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_below(rng, i))]);
}

}  // namespace tunedetect
