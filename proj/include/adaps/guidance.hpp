#pragma once

#include <cmath>
#include <string>

#include "adaps/core.hpp"
#include "adaps/operators.hpp"
#include "adaps/priors.hpp"

namespace adaps {

enum class SurrogateKind { dps, pgdm, map };
enum class XiMode { adaptive, fixed, averaged };

inline SurrogateKind parse_surrogate(const std::string& s) {
    if (s == "dps") return SurrogateKind::dps;
    if (s == "pgdm") return SurrogateKind::pgdm;
    if (s == "map") return SurrogateKind::map;
    throw ConfigError("unknown surrogate '" + s + "'");
}

inline const char* to_string(SurrogateKind k) {
    switch (k) {
        case SurrogateKind::dps: return "dps";
        case SurrogateKind::pgdm: return "pgdm";
        default: return "map";
    }
}

/// Choice of direction surrogate g_t, magnitude surrogate d_t and step-size
/// mode. Defaults give the PGDM direction with the MAP magnitude under the
/// adaptive coefficient.
struct GuidanceSpec {
    SurrogateKind g_kind = SurrogateKind::pgdm;
    SurrogateKind d_kind = SurrogateKind::map;
    XiMode xi_mode = XiMode::adaptive;
    double xi_value = 1.0;          // used by XiMode::fixed
    bool normalize_g = true;
    bool allow_negative_xi = false;  // adaptive steps against the likelihood are zeroed by default

    void validate() const {
        if (xi_mode == XiMode::fixed)
            require(std::isfinite(xi_value) && xi_value >= 0.0, "fixed xi must be finite and >= 0");
    }
};

/// One evaluated guidance term: direction g (post-normalization), residual d,
/// coefficient xi and the vector xi*g subtracted (scaled by gamma) inside the
/// conditional step.
struct GuidanceStep {
    Vec g;
    Vec d;
    double xi = 0.0;
    Vec update;
};

// All surrogates are additive noise-space terms: they are added to eps_theta
// to form the conditional noise estimate, so they carry the residual with the
// (A x0_hat - y) orientation. A positive multiple of any of them, subtracted
// through the gamma-weighted step, moves the next iterate toward measurement
// consistency.

/// DPS term: abar * (d x0_hat/d x_t)^T A^T (A x0_hat - y). Equals the
/// gradient of abar * 0.5 ||y - A x0_hat(x_t)||^2 with respect to x_t.
inline Vec surrogate_dps(const ScoreModel& score, const LinearOperator& op, const Vec& y,
                         double /*sigma_y*/, const Vec& x_t, double abar) {
    DenoiseOutput den = score.eps_theta(x_t, abar);
    Vec resid = op.apply(den.x0_hat) - y;
    return abar * score.x0_vjp(x_t, abar, op.adjoint(resid));
}

/// PGDM term: (abar/r^2) (d x0_hat/d x_t)^T A^T (A A^T + sigma_y^2/r^2 I)^{-1}
/// (A x0_hat - y) with r^2 = 1 - abar.
inline Vec surrogate_pgdm(const ScoreModel& score, const LinearOperator& op, const Vec& y,
                          double sigma_y, const Vec& x_t, double abar) {
    double r_sq = 1.0 - abar;
    require(r_sq > 0.0, "pgdm surrogate undefined at abar = 1");
    DenoiseOutput den = score.eps_theta(x_t, abar);
    Vec resid = op.apply(den.x0_hat) - y;
    Vec w = op.gram_solve(sigma_y * sigma_y / r_sq, resid);
    return (abar / r_sq) * score.x0_vjp(x_t, abar, op.adjoint(w));
}

/// MAP residual d_t = (sqrt(abar)/sqrt(1-abar)) A^T (A A^T + sigma_y^2/r^2 I)^{-1}
/// (A x0_hat - y); Jacobian-free, also usable as a direction surrogate.
inline Vec surrogate_map_residual(const LinearOperator& op, const Vec& y, double sigma_y,
                                  const Vec& x0_hat, double abar) {
    require(abar > 0.0 && abar < 1.0, "map residual needs 0 < abar < 1");
    double r_sq = 1.0 - abar;
    Vec resid = op.apply(x0_hat) - y;
    Vec w = op.gram_solve(sigma_y * sigma_y / r_sq, resid);
    return (std::sqrt(abar) / std::sqrt(r_sq)) * op.adjoint(w);
}

/// Closed-form minimizer of the quadratic proximal objective
/// ||y - A x||^2/(2 sigma_y^2) + ||x - x0_hat||^2/(2 r_sq):
/// x* = x0_hat + A^T (A A^T + sigma_y^2/r_sq I)^{-1} (y - A x0_hat).
inline Vec map_estimate(const LinearOperator& op, const Vec& y, double sigma_y, const Vec& x0_hat,
                        double r_sq) {
    require(r_sq > 0.0, "map estimate needs r_sq > 0");
    Vec resid = y - op.apply(x0_hat);
    Vec w = op.gram_solve(sigma_y * sigma_y / r_sq, resid);
    return x0_hat + op.adjoint(w);
}

/// Least-squares projection coefficient with the bias correction:
/// 2 <d,g> / ||g||^2, and 0 when g vanishes.
inline double adaptive_xi(const Vec& d, const Vec& g) {
    double gg = g.squaredNorm();
    if (gg == 0.0) return 0.0;
    return 2.0 * d.dot(g) / gg;
}

namespace detail {

inline Vec eval_surrogate(SurrogateKind kind, const ScoreModel& score, const LinearOperator& op,
                          const Vec& y, double sigma_y, const Vec& x_t, double abar,
                          const DenoiseOutput& den) {
    switch (kind) {
        case SurrogateKind::dps: {
            Vec resid = op.apply(den.x0_hat) - y;
            return abar * score.x0_vjp(x_t, abar, op.adjoint(resid));
        }
        case SurrogateKind::pgdm: {
            double r_sq = 1.0 - abar;
            require(r_sq > 0.0, "pgdm surrogate undefined at abar = 1");
            Vec resid = op.apply(den.x0_hat) - y;
            Vec w = op.gram_solve(sigma_y * sigma_y / r_sq, resid);
            return (abar / r_sq) * score.x0_vjp(x_t, abar, op.adjoint(w));
        }
        default:
            return surrogate_map_residual(op, y, sigma_y, den.x0_hat, abar);
    }
}

inline GuidanceStep assemble_guidance(const GuidanceSpec& spec, Vec g_raw, Vec d) {
    GuidanceStep out;
    out.d = std::move(d);
    double gnorm = g_raw.norm();
    if (gnorm == 0.0) {
        out.g = std::move(g_raw);
        out.xi = spec.xi_mode == XiMode::fixed ? spec.xi_value : 0.0;
        out.update = Vec::Zero(out.g.size());
        return out;
    }
    out.g = spec.normalize_g ? Vec(g_raw / gnorm) : std::move(g_raw);
    Vec dir = out.g;
    if (spec.xi_mode == XiMode::averaged) dir = 0.5 * (out.g + out.d);
    switch (spec.xi_mode) {
        case XiMode::fixed:
            out.xi = spec.xi_value;
            break;
        case XiMode::adaptive:
        case XiMode::averaged:
            out.xi = adaptive_xi(out.d, dir);
            if (!spec.allow_negative_xi && out.xi < 0.0) out.xi = 0.0;
            break;
    }
    out.update = out.xi * dir;
    return out;
}

}  // namespace detail

/// Evaluates direction, magnitude and coefficient for one conditional step.
inline GuidanceStep guidance_step(const GuidanceSpec& spec, const ScoreModel& score,
                                  const LinearOperator& op, const Vec& y, double sigma_y,
                                  const Vec& x_t, double abar) {
    spec.validate();
    DenoiseOutput den = score.eps_theta(x_t, abar);
    Vec g_raw = detail::eval_surrogate(spec.g_kind, score, op, y, sigma_y, x_t, abar, den);
    Vec d = spec.d_kind == spec.g_kind
                ? g_raw
                : detail::eval_surrogate(spec.d_kind, score, op, y, sigma_y, x_t, abar, den);
    return detail::assemble_guidance(spec, std::move(g_raw), std::move(d));
}

/// Overload reusing a denoiser evaluation already computed by the sampler.
inline GuidanceStep guidance_step(const GuidanceSpec& spec, const ScoreModel& score,
                                  const LinearOperator& op, const Vec& y, double sigma_y,
                                  const Vec& x_t, double abar, const DenoiseOutput& den) {
    spec.validate();
    Vec g_raw = detail::eval_surrogate(spec.g_kind, score, op, y, sigma_y, x_t, abar, den);
    Vec d = spec.d_kind == spec.g_kind
                ? g_raw
                : detail::eval_surrogate(spec.d_kind, score, op, y, sigma_y, x_t, abar, den);
    return detail::assemble_guidance(spec, std::move(g_raw), std::move(d));
}

}  // namespace adaps
