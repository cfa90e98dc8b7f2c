#pragma once

#include <cmath>
#include <vector>

#include "adaps/core.hpp"

namespace adaps {

/// Discrete variance-preserving noise schedule. Timesteps are 1-based;
/// alpha_bar(0) == 1 by convention. `respaced_timesteps` is the strictly
/// increasing subsequence of {1..T} visited by the sampler and always
/// contains the terminal index T.
struct Schedule {
    Vec betas;                           // per-step noise rates, length T
    Vec alpha_bars;                      // cumulative products, length T
    std::vector<int> respaced_timesteps; // ascending, last element == T

    int full_steps() const { return static_cast<int>(betas.size()); }
    int num_steps() const { return static_cast<int>(respaced_timesteps.size()); }

    double alpha_bar(int t) const {
        if (t == 0) return 1.0;
        return alpha_bars[t - 1];
    }
};

/// Coefficients of one reverse jump from timestep t to t_prev. `gamma`
/// multiplies the (conditional) noise estimate, `sigma` scales fresh noise,
/// and alpha_eff = abar / abar_prev is the per-jump ratio, which keeps the
/// update exact under re-spacing.
struct StepCoeffs {
    int t = 0;
    int t_prev = 0;
    double abar = 1.0;
    double abar_prev = 1.0;
    double gamma = 0.0;
    double sigma = 0.0;
    double r_sq = 0.0;  // 1 - abar
    double sqrt_abar = 1.0;
    double sqrt_one_minus_abar = 0.0;

    double alpha_eff() const { return abar / abar_prev; }
};

inline Schedule make_linear_schedule(int T, double beta_start, double beta_end) {
    require(T >= 1, "schedule length must be >= 1");
    require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end,
            "require 0 < beta_start <= beta_end < 1");
    Schedule s;
    s.betas.resize(T);
    s.alpha_bars.resize(T);
    double abar = 1.0;
    for (int t = 0; t < T; ++t) {
        double b = (T == 1) ? beta_start
                            : beta_start + (beta_end - beta_start) * t / double(T - 1);
        s.betas[t] = b;
        abar *= 1.0 - b;
        s.alpha_bars[t] = abar;
    }
    s.respaced_timesteps.resize(T);
    for (int t = 0; t < T; ++t) s.respaced_timesteps[t] = t + 1;
    return s;
}

/// Builds a schedule whose per-step rates reproduce the given cumulative
/// products exactly.
inline Schedule schedule_from_alpha_bars(const Vec& abars) {
    require(abars.size() >= 1, "need at least one alpha_bar");
    Schedule s;
    int T = static_cast<int>(abars.size());
    s.betas.resize(T);
    s.alpha_bars = abars;
    double prev = 1.0;
    for (int t = 0; t < T; ++t) {
        require(abars[t] > 0.0 && abars[t] < prev, "alpha_bars must be strictly decreasing in (0,1]");
        s.betas[t] = 1.0 - abars[t] / prev;
        prev = abars[t];
    }
    s.respaced_timesteps.resize(T);
    for (int t = 0; t < T; ++t) s.respaced_timesteps[t] = t + 1;
    return s;
}

/// Uniform re-spacing to N sampling steps. The terminal index T is always
/// kept so chains start from the fully-noised marginal.
inline Schedule respace(const Schedule& sched, int N) {
    int T = sched.full_steps();
    require(N >= 1, "step count must be >= 1");
    if (N > T) throw ConfigError("respace: N exceeds schedule length");
    Schedule out = sched;
    out.respaced_timesteps.resize(N);
    for (int k = 0; k < N; ++k) {
        out.respaced_timesteps[k] =
            static_cast<int>((static_cast<long long>(T) * (k + 1)) / N);
    }
    return out;
}

/// Coefficients for the jump at respaced position `pos` (0-based). Position 0
/// is the final jump, which targets alpha_bar = 1 (exact terminal denoise).
inline StepCoeffs step_coeffs(const Schedule& sched, int pos, double eta) {
    require(pos >= 0 && pos < sched.num_steps(), "step position out of range");
    require(eta >= 0.0 && eta <= 1.0, "eta must lie in [0,1]");
    StepCoeffs c;
    c.t = sched.respaced_timesteps[pos];
    c.t_prev = pos > 0 ? sched.respaced_timesteps[pos - 1] : 0;
    c.abar = sched.alpha_bar(c.t);
    c.abar_prev = sched.alpha_bar(c.t_prev);
    c.r_sq = 1.0 - c.abar;
    c.sqrt_abar = std::sqrt(c.abar);
    c.sqrt_one_minus_abar = std::sqrt(c.r_sq);

    double alpha = c.alpha_eff();
    if (c.r_sq > 0.0) {
        c.sigma = eta * std::sqrt(1.0 - alpha) * std::sqrt((1.0 - c.abar_prev) / c.r_sq);
    } else {
        c.sigma = 0.0;
    }
    double arg = 1.0 - c.abar_prev - c.sigma * c.sigma;
    if (arg < 0.0) {
        // eta <= 1 guarantees arg >= 0 analytically; tolerate float dust only
        if (arg < -1e-12) throw NumericalError("negative variance argument in step coefficients");
        arg = 0.0;
    }
    c.gamma = c.sqrt_one_minus_abar / std::sqrt(alpha) - std::sqrt(arg);
    return c;
}

}  // namespace adaps
