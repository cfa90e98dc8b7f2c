#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace adaps {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Invalid parameters or malformed configuration.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error("config: " + msg) {}
};

/// Vector/operator shape mismatch.
struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& msg) : std::runtime_error("dimension: " + msg) {}
};

/// Iterative solve failed or a non-finite value appeared; carries context.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error("numerical: " + msg) {}
};

/// Singular system requested without regularization.
struct SingularityError : std::runtime_error {
    explicit SingularityError(const std::string& msg) : std::runtime_error("singular: " + msg) {}
};

/// Quadrature grid cannot represent the requested density.
struct ResolutionError : std::runtime_error {
    explicit ResolutionError(const std::string& msg) : std::runtime_error("resolution: " + msg) {}
};

/// File format or filesystem failure.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io: " + msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ConfigError(msg);
}

inline void require_dim(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

inline double rel_err(const Vec& a, const Vec& b) {
    double den = b.norm();
    return den > 0 ? (a - b).norm() / den : (a - b).norm();
}

}  // namespace adaps
