#pragma once

#include <cmath>
#include <cstdint>

namespace mrl::rng {

// Counter-based generator: every variate is a pure function of a 64-bit key
// assembled from (seed, path, stream tag, indices). No generator state is
// carried around, so ensembles are reproducible independent of thread
// scheduling and evaluation order.

enum class Stream : std::uint64_t {
    increments = 1,
    bridge = 2,
    ou = 3,
    probe = 4,
    validate = 5,
    bootstrap = 6,
    init = 7,
};

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

inline std::uint64_t mix(std::uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t key(std::uint64_t seed, std::uint64_t path, Stream tag,
                         std::uint64_t a = 0, std::uint64_t b = 0,
                         std::uint64_t c = 0) {
    std::uint64_t h = mix(seed ^ 0x517cc1b727220a95ULL);
    h = mix(h ^ path);
    h = mix(h ^ static_cast<std::uint64_t>(tag));
    h = mix(h ^ a);
    h = mix(h ^ b);
    h = mix(h ^ c);
    return h;
}

/// Uniform double in the open interval (0,1).
inline double uniform(std::uint64_t k) {
    return static_cast<double>(mix(k) >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

/// Two independent standard normals from one key (Box-Muller).
inline void gaussian_pair(std::uint64_t k, double* g1, double* g2) {
    const double u1 = static_cast<double>(mix(k) >> 11) * 0x1.0p-53 + 0x1.0p-54;
    const double u2 = static_cast<double>(mix(k + kGolden) >> 11) * 0x1.0p-53;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double phi = 6.283185307179586476925286766559 * u2;
    *g1 = r * std::cos(phi);
    *g2 = r * std::sin(phi);
}

inline double gaussian(std::uint64_t k) {
    double g1, g2;
    gaussian_pair(k, &g1, &g2);
    return g1;
}

}  // namespace mrl::rng
