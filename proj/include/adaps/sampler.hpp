#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "adaps/core.hpp"
#include "adaps/guidance.hpp"
#include "adaps/rng.hpp"
#include "adaps/schedule.hpp"

namespace adaps {

struct SamplerConfig {
    int steps = 100;
    double eta = 1.0;
    std::optional<GuidanceSpec> guidance;  // absent -> unconditional chain
    std::uint64_t rng_seed = 0;
    bool record_trajectory = false;
    bool clip_x0 = false;  // clamp denoised estimates to [clip_lo, clip_hi]
    double clip_lo = -1.0;
    double clip_hi = 1.0;

    void validate() const {
        require(steps >= 1, "sampler needs at least one step");
        require(eta >= 0.0 && eta <= 1.0, "eta must lie in [0,1]");
        if (guidance) guidance->validate();
    }
};

/// Per-step diagnostics. The state vectors are only retained when the run
/// asks for a full trajectory.
struct TrajectoryRecord {
    int t = 0;
    double xi = 0.0;
    double d_norm = 0.0;
    double alignment = 0.0;  // <d_hat, g_hat>
    Vec x_t;
    Vec x0_hat;
};

struct Trajectory {
    std::vector<TrajectoryRecord> steps;
};

struct SampleResult {
    Vec x0;
    Trajectory trajectory;
};

/// One reverse jump x_t -> x_{t-1}:
///   x_{t-1} = x_t / sqrt(alpha_eff) - gamma * eps + sigma * noise.
inline Vec ddim_step(const Vec& x_t, const StepCoeffs& coeffs, const DenoiseOutput& den,
                     const Vec& noise) {
    Vec out = x_t / std::sqrt(coeffs.alpha_eff()) - coeffs.gamma * den.eps;
    if (coeffs.sigma > 0.0) {
        require_dim(noise.size() == x_t.size(), "noise length mismatch");
        out += coeffs.sigma * noise;
    }
    return out;
}

/// Conditional jump: the guidance update rides on the same gamma coefficient
/// as the noise estimate.
inline Vec adaps_step(const Vec& x_t, const StepCoeffs& coeffs, const DenoiseOutput& den,
                      const GuidanceStep& gstep, const Vec& noise) {
    return ddim_step(x_t, coeffs, den, noise) - coeffs.gamma * gstep.update;
}

namespace detail {

using GuidanceFn = std::function<GuidanceStep(const Vec& x_t, const StepCoeffs& coeffs,
                                              const DenoiseOutput& den)>;

inline SampleResult run_chain(const SamplerConfig& config, const Schedule& schedule,
                              const ScoreModel& score, const GuidanceFn& guide) {
    config.validate();
    Schedule sched = respace(schedule, config.steps);
    const int N = sched.num_steps();
    const Eigen::Index n = score.dim();

    Rng rng(config.rng_seed);
    Vec x = rng.normal_vec(n);

    SampleResult result;
    result.trajectory.steps.reserve(static_cast<size_t>(N));

    for (int pos = N - 1; pos >= 0; --pos) {
        StepCoeffs coeffs;
        try {
            coeffs = step_coeffs(sched, pos, config.eta);
            DenoiseOutput den = score.eps_theta(x, coeffs.abar);
            if (config.clip_x0) {
                den.x0_hat = den.x0_hat.cwiseMax(config.clip_lo).cwiseMin(config.clip_hi);
                if (coeffs.r_sq > 0.0)
                    den.eps = (x - coeffs.sqrt_abar * den.x0_hat) / coeffs.sqrt_one_minus_abar;
            }

            TrajectoryRecord rec;
            rec.t = coeffs.t;
            if (config.record_trajectory) {
                rec.x_t = x;
                rec.x0_hat = den.x0_hat;
            }

            // fresh noise is consumed every step, even when sigma == 0, so
            // paired-seed runs see identical streams across eta values
            Vec noise = rng.normal_vec(n);
            if (coeffs.sigma == 0.0) noise.setZero();

            if (guide) {
                GuidanceStep gstep = guide(x, coeffs, den);
                rec.xi = gstep.xi;
                rec.d_norm = gstep.d.norm();
                double gn = gstep.g.norm();
                rec.alignment =
                    (rec.d_norm > 0.0 && gn > 0.0) ? gstep.d.dot(gstep.g) / (rec.d_norm * gn) : 0.0;
                x = adaps_step(x, coeffs, den, gstep, noise);
            } else {
                x = ddim_step(x, coeffs, den, noise);
            }
            result.trajectory.steps.push_back(std::move(rec));
        } catch (const std::exception& e) {
            throw NumericalError("sampling aborted at step position " + std::to_string(pos) +
                                 " (t=" + std::to_string(sched.respaced_timesteps[pos]) +
                                 "): " + e.what());
        }
        if (!x.allFinite())
            throw NumericalError("sampling diverged at step position " + std::to_string(pos));
    }
    result.x0 = std::move(x);
    return result;
}

}  // namespace detail

/// Unconditional chain from x_T ~ N(0, I).
inline SampleResult sample(const SamplerConfig& config, const Schedule& schedule,
                           const ScoreModel& score) {
    require(!config.guidance, "guidance spec given but no operator/measurement");
    return detail::run_chain(config, schedule, score, nullptr);
}

/// Conditional chain; requires a guidance spec in the config.
inline SampleResult sample(const SamplerConfig& config, const Schedule& schedule,
                           const ScoreModel& score, const LinearOperator& op,
                           const Measurement& meas) {
    require(config.guidance.has_value(), "conditional sampling needs a guidance spec");
    require_dim(op.in_dim() == score.dim(), "operator/prior dimension mismatch");
    require_dim(meas.y.size() == op.out_dim(), "measurement length mismatch");
    const GuidanceSpec spec = *config.guidance;
    auto guide = [&spec, &score, &op, &meas](const Vec& x_t, const StepCoeffs& coeffs,
                                             const DenoiseOutput& den) {
        return guidance_step(spec, score, op, meas.y, meas.sigma_y, x_t, coeffs.abar, den);
    };
    return detail::run_chain(config, schedule, score, guide);
}

/// Conditional chain with a caller-supplied guidance evaluator (used for
/// nonlinear measurement models).
inline SampleResult sample_with_guidance(const SamplerConfig& config, const Schedule& schedule,
                                         const ScoreModel& score,
                                         const detail::GuidanceFn& guide) {
    return detail::run_chain(config, schedule, score, guide);
}

}  // namespace adaps
