#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "adaps/core.hpp"
#include "adaps/guidance.hpp"
#include "adaps/operators.hpp"
#include "adaps/priors.hpp"
#include "adaps/rng.hpp"

namespace adaps {

namespace detail {

class NlOpImpl {
  public:
    virtual ~NlOpImpl() = default;
    virtual Eigen::Index in_dim() const = 0;
    virtual Eigen::Index out_dim() const = 0;
    virtual Vec forward(const Vec& x) const = 0;
    /// J(x)^T v via backpropagation through the model.
    virtual Vec vjp(const Vec& x, const Vec& v) const = 0;
    virtual const char* kind() const = 0;
};

/// Componentwise x + a*tanh(b*x); smooth and invertible for a > -1/b... kept
/// to a,b > 0 where monotonicity is immediate.
class TanhOp final : public NlOpImpl {
  public:
    TanhOp(Eigen::Index n, double a, double b) : n_(n), a_(a), b_(b) {
        require(n >= 1 && b > 0.0 && a > 0.0, "tanh operator needs n>=1, a>0, b>0");
    }
    Eigen::Index in_dim() const override { return n_; }
    Eigen::Index out_dim() const override { return n_; }
    Vec forward(const Vec& x) const override {
        return x.array() + a_ * (b_ * x.array()).tanh();
    }
    Vec vjp(const Vec& x, const Vec& v) const override {
        Eigen::ArrayXd th = (b_ * x.array()).tanh();
        Eigen::ArrayXd jac = 1.0 + a_ * b_ * (1.0 - th.square());
        return (jac * v.array()).matrix();
    }
    const char* kind() const override { return "tanh"; }

  private:
    Eigen::Index n_;
    double a_, b_;
};

/// (H x)^2 elementwise after a circulant filter H; a toy nonlinear blur.
class SquaredBlurOp final : public NlOpImpl {
  public:
    explicit SquaredBlurOp(LinearOperator H) : H_(std::move(H)) {
        require_dim(H_.in_dim() == H_.out_dim(), "squared blur expects a square filter");
    }
    Eigen::Index in_dim() const override { return H_.in_dim(); }
    Eigen::Index out_dim() const override { return H_.out_dim(); }
    Vec forward(const Vec& x) const override {
        Vec h = H_.apply(x);
        return h.array().square();
    }
    Vec vjp(const Vec& x, const Vec& v) const override {
        Vec h = H_.apply(x);
        return H_.adjoint((2.0 * h.array() * v.array()).matrix());
    }
    const char* kind() const override { return "squared-blur"; }

  private:
    LinearOperator H_;
};

class LinearWrapOp final : public NlOpImpl {
  public:
    explicit LinearWrapOp(LinearOperator A) : A_(std::move(A)) {}
    Eigen::Index in_dim() const override { return A_.in_dim(); }
    Eigen::Index out_dim() const override { return A_.out_dim(); }
    Vec forward(const Vec& x) const override { return A_.apply(x); }
    Vec vjp(const Vec&, const Vec& v) const override { return A_.adjoint(v); }
    const char* kind() const override { return "linear-wrap"; }

  private:
    LinearOperator A_;
};

}  // namespace detail

/// Differentiable measurement model with forward evaluation and
/// vector-Jacobian products.
class NonlinearOperator {
  public:
    NonlinearOperator() = default;
    explicit NonlinearOperator(std::shared_ptr<const detail::NlOpImpl> impl)
        : impl_(std::move(impl)) {}

    Eigen::Index in_dim() const { return impl_->in_dim(); }
    Eigen::Index out_dim() const { return impl_->out_dim(); }
    std::string kind() const { return impl_->kind(); }
    bool valid() const { return impl_ != nullptr; }

    Vec forward(const Vec& x) const {
        require_dim(x.size() == in_dim(), "forward: wrong length");
        return impl_->forward(x);
    }
    Vec vjp(const Vec& x, const Vec& v) const {
        require_dim(x.size() == in_dim() && v.size() == out_dim(), "vjp: wrong length");
        return impl_->vjp(x, v);
    }

  private:
    std::shared_ptr<const detail::NlOpImpl> impl_;
};

inline NonlinearOperator tanh_operator(Eigen::Index n, double a, double b) {
    return NonlinearOperator(std::make_shared<detail::TanhOp>(n, a, b));
}
inline NonlinearOperator squared_blur_operator(LinearOperator H) {
    return NonlinearOperator(std::make_shared<detail::SquaredBlurOp>(std::move(H)));
}
inline NonlinearOperator wrap_linear(LinearOperator A) {
    return NonlinearOperator(std::make_shared<detail::LinearWrapOp>(std::move(A)));
}

inline Measurement nl_synthesize(const NonlinearOperator& op, const Vec& x0, double sigma_y,
                                 std::uint64_t rng_seed) {
    require(sigma_y >= 0.0, "noise std must be >= 0");
    Measurement m;
    m.sigma_y = sigma_y;
    m.y = op.forward(x0);
    if (sigma_y > 0.0) {
        Rng rng(rng_seed);
        m.y += sigma_y * rng.normal_vec(m.y.size());
    }
    if (!m.y.allFinite()) throw NumericalError("synthesized measurement is not finite");
    return m;
}

/// Scalar Gauss-Newton settings. The damped update divides the gradient by a
/// scalar curvature estimate, so only backprop through the model is needed.
struct GNConfig {
    int iterations = 5;
    double lambda_damp = 1e-3;
    double residual_floor = 1e-12;  // guards ||r||^2 division at exact fits
    int max_backtracks = 8;

    void validate() const {
        require(iterations >= 1, "need at least one Gauss-Newton iteration");
        require(lambda_damp > 0.0, "damping must be positive");
        require(residual_floor > 0.0, "residual floor must be positive");
    }
};

namespace detail {

inline double nl_objective(const NonlinearOperator& op, const Vec& y, double sigma_y,
                           const Vec& x0_hat, double r_sq, const Vec& x) {
    double data = (op.forward(x) - y).squaredNorm() / (2.0 * sigma_y * sigma_y);
    double prior = (x - x0_hat).squaredNorm() / (2.0 * r_sq);
    return data + prior;
}

}  // namespace detail

/// Iterative proximal MAP point for a nonlinear model: minimizes
/// ||y - A(x)||^2/(2 sigma_y^2) + ||x - x0_hat||^2/(2 r_sq) by damped scalar
/// Gauss-Newton steps starting from x0_hat. Step halving keeps the objective
/// non-increasing.
inline Vec nl_map_estimate(const NonlinearOperator& op, const Vec& y, double sigma_y,
                           const Vec& x0_hat, double r_sq, const GNConfig& cfg = {}) {
    cfg.validate();
    require(sigma_y > 0.0, "nonlinear MAP needs sigma_y > 0");
    require(r_sq > 0.0, "nonlinear MAP needs r_sq > 0");
    const double sig2 = sigma_y * sigma_y;

    Vec x = x0_hat;
    double phi = detail::nl_objective(op, y, sigma_y, x0_hat, r_sq, x);
    for (int k = 0; k < cfg.iterations; ++k) {
        Vec r = op.forward(x) - y;
        Vec g_d = op.vjp(x, r) / sig2;
        Vec grad = g_d + (x - x0_hat) / r_sq;
        double h_d = sig2 * g_d.squaredNorm() / std::max(r.squaredNorm(), cfg.residual_floor);
        double h_tot = h_d + 1.0 / r_sq;
        Vec step = grad / (h_tot + cfg.lambda_damp);
        if (!step.allFinite())
            throw NumericalError("non-finite Gauss-Newton step at iteration " + std::to_string(k));

        double scale = 1.0;
        bool accepted = false;
        for (int b = 0; b <= cfg.max_backtracks; ++b) {
            Vec cand = x - scale * step;
            double phi_c = detail::nl_objective(op, y, sigma_y, x0_hat, r_sq, cand);
            if (!std::isfinite(phi_c)) {
                scale *= 0.5;
                continue;
            }
            if (phi_c <= phi) {
                x = std::move(cand);
                phi = phi_c;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if (!accepted) break;  // stationary within backtracking resolution
    }
    return x;
}

/// Noise-space residual through the nonlinear MAP point:
/// d_t = sqrt(abar)/sqrt(1-abar) * (x0_hat - x0_star).
inline Vec nl_residual_dt(const NonlinearOperator& op, const Vec& y, double sigma_y,
                          const Vec& x0_hat, double abar, const GNConfig& cfg = {}) {
    require(abar > 0.0 && abar < 1.0, "nonlinear residual needs 0 < abar < 1");
    double r_sq = 1.0 - abar;
    Vec x_star = nl_map_estimate(op, y, sigma_y, x0_hat, r_sq, cfg);
    return (std::sqrt(abar) / std::sqrt(r_sq)) * (x0_hat - x_star);
}

/// Guidance for nonlinear models: DPS direction by backprop through the
/// model, MAP magnitude from the Gauss-Newton point. PGDM has no tractable
/// nonlinear form and is rejected.
inline GuidanceStep nl_guidance_step(const GuidanceSpec& spec, const ScoreModel& score,
                                     const NonlinearOperator& op, const Vec& y, double sigma_y,
                                     const Vec& x_t, double abar, const DenoiseOutput& den,
                                     const GNConfig& cfg = {}) {
    spec.validate();
    require(spec.g_kind != SurrogateKind::pgdm && spec.d_kind != SurrogateKind::pgdm,
            "pgdm surrogate is undefined for nonlinear operators");
    auto eval = [&](SurrogateKind kind) -> Vec {
        if (kind == SurrogateKind::dps) {
            Vec resid = op.forward(den.x0_hat) - y;
            return abar * score.x0_vjp(x_t, abar, op.vjp(den.x0_hat, resid));
        }
        return nl_residual_dt(op, y, sigma_y, den.x0_hat, abar, cfg);
    };
    Vec g_raw = eval(spec.g_kind);
    Vec d = spec.d_kind == spec.g_kind ? g_raw : eval(spec.d_kind);
    return detail::assemble_guidance(spec, std::move(g_raw), std::move(d));
}

}  // namespace adaps
