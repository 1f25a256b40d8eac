#pragma once

#include <cstddef>
#include <cstdint>

namespace mrl {

/// Uniform time grid on [0, T] with n_steps steps (n_steps + 1 nodes).
struct TimeGrid {
    double horizon = 1.0;
    std::size_t n_steps = 1;

    double dt() const { return horizon / static_cast<double>(n_steps); }
    double t(std::size_t i) const { return horizon * static_cast<double>(i) / static_cast<double>(n_steps); }
    std::size_t n_nodes() const { return n_steps + 1; }

    bool dyadic() const { return n_steps > 0 && (n_steps & (n_steps - 1)) == 0; }
    int level() const {
        int l = 0;
        for (std::size_t n = n_steps; n > 1; n >>= 1) ++l;
        return l;
    }

    bool operator==(const TimeGrid&) const = default;
};

}  // namespace mrl
