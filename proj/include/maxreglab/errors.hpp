#pragma once

#include <stdexcept>
#include <string>

namespace mrl {

/// Base class for all maxreglab errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SectorialityViolation : Error { using Error::Error; };
struct NegativeTime : Error { using Error::Error; };
struct AliasedGrid : Error { using Error::Error; };
struct QuadratureNotConverged : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct AdaptednessViolation : Error { using Error::Error; };
struct NotSelfAdjoint : Error { using Error::Error; };
struct InsufficientSamples : Error { using Error::Error; };
struct InsufficientLevels : Error { using Error::Error; };
struct FreezingFailed : Error { using Error::Error; };
struct UnknownForm : Error { using Error::Error; };
struct InvalidScenario : Error { using Error::Error; };

/// Smallness condition of the fixed-point solver fails: K* L_F + K<> L_B >= 1.
struct SmallnessViolated : Error {
    double budget;  // K* L_F + K<> L_B
    explicit SmallnessViolated(const std::string& msg, double budget_)
        : Error(msg), budget(budget_) {}
};

/// Picard iteration hit the iteration cap. Carries the last observed ratio
/// and, when thrown from a multi-interval solve, the failing piece index.
struct NoConvergence : Error {
    double last_ratio;
    int subinterval;
    NoConvergence(const std::string& msg, double ratio, int piece = -1)
        : Error(msg), last_ratio(ratio), subinterval(piece) {}
};

}  // namespace mrl
