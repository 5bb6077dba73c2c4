#pragma once

#include <cmath>
#include <cstdint>

namespace perfhom {

// Counter-based Gaussian stream. Every draw is a pure function of
// (seed, path, step, mode), so increments can be generated in any order,
// from any thread, and replayed exactly. Mixing is splitmix64 applied to
// the four key words in sequence.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ (b + 0x9E3779B97F4A7C15ull));
}

// uniform in (0,1), never exactly 0 or 1
inline double to_unit(std::uint64_t z) {
    return (static_cast<double>(z >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

// standard normal via Box-Muller on two decorrelated counters
inline double normal(std::uint64_t key) {
    const double u1 = to_unit(splitmix64(key ^ 0x5851F42D4C957F2Dull));
    const double u2 = to_unit(splitmix64(key ^ 0x14057B7EF767814Full));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

inline std::uint64_t key(std::uint64_t seed, std::uint64_t path,
                         std::uint64_t step, std::uint64_t mode) {
    return mix(mix(mix(seed, path), step), mode);
}

// seed for one sample path, derived from the ensemble master seed
inline std::uint64_t path_seed(std::uint64_t master_seed, std::uint64_t path_index) {
    return mix(master_seed, path_index);
}

} // namespace rng
} // namespace perfhom
