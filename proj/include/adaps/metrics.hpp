#pragma once

#include <cmath>
#include <limits>

#include "adaps/core.hpp"

namespace adaps {

inline double mse(const Vec& x, const Vec& ref) {
    require_dim(x.size() == ref.size(), "mse: shape mismatch");
    return (x - ref).squaredNorm() / static_cast<double>(x.size());
}

/// 10 log10(peak^2 / MSE), capped at 200 dB for exact matches.
inline double psnr(const Vec& x, const Vec& ref, double peak) {
    require(peak > 0.0, "psnr peak must be positive");
    double m = mse(x, ref);
    if (m == 0.0) return 200.0;
    double db = 10.0 * std::log10(peak * peak / m);
    return std::min(db, 200.0);
}

/// Per-run summary. `w1` is NaN for tasks without a quadrature oracle;
/// `wall_time_sec` is informational and never serialized (outputs stay
/// bitwise reproducible).
struct MetricsRecord {
    double psnr = 0.0;
    double mse = 0.0;
    double w1 = std::numeric_limits<double>::quiet_NaN();
    double mean_xi = 0.0;
    double mean_alignment = 0.0;
    double wall_time_sec = 0.0;
};

}  // namespace adaps
