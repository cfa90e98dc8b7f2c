#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <utility>
#include <vector>

#include "adaps/core.hpp"

namespace adaps {

/// Noise prediction and the matching denoised estimate; the two always
/// satisfy x_t = sqrt(abar) * x0_hat + sqrt(1-abar) * eps.
struct DenoiseOutput {
    Vec eps;
    Vec x0_hat;
};

namespace detail {

class PriorImpl {
  public:
    virtual ~PriorImpl() = default;
    virtual Eigen::Index dim() const = 0;
    virtual DenoiseOutput eps_theta(const Vec& x_t, double abar) const = 0;
    virtual Vec x0_vjp(const Vec& x_t, double abar, const Vec& v) const = 0;
    virtual const char* kind() const = 0;
};

inline void check_abar(double abar) {
    require(abar > 0.0 && abar <= 1.0, "abar must lie in (0,1]");
}

class GaussianPrior final : public PriorImpl {
  public:
    GaussianPrior(Vec mean, Vec var) : mu_(std::move(mean)), var_(std::move(var)) {
        require_dim(mu_.size() == var_.size(), "mean/variance length mismatch");
        require((var_.array() > 0.0).all(), "prior variances must be positive");
    }
    Eigen::Index dim() const override { return mu_.size(); }
    DenoiseOutput eps_theta(const Vec& x_t, double abar) const override {
        check_abar(abar);
        double sa = std::sqrt(abar), sr = std::sqrt(1.0 - abar);
        Vec marg_var = abar * var_.array() + (1.0 - abar);
        DenoiseOutput out;
        out.eps = sr * ((x_t - sa * mu_).array() / marg_var.array()).matrix();
        out.x0_hat = (x_t - sr * out.eps) / sa;
        return out;
    }
    Vec x0_vjp(const Vec& /*x_t*/, double abar, const Vec& v) const override {
        check_abar(abar);
        // posterior-mean map is affine; its Jacobian is the constant diagonal
        // sqrt(abar) var / (abar var + 1 - abar)
        Vec marg_var = abar * var_.array() + (1.0 - abar);
        return (std::sqrt(abar) * var_.array() / marg_var.array() * v.array()).matrix();
    }
    const char* kind() const override { return "gaussian"; }
    const Vec& mean() const { return mu_; }
    const Vec& variances() const { return var_; }

  private:
    Vec mu_, var_;
};

class GmmPrior final : public PriorImpl {
  public:
    GmmPrior(Vec weights, Mat means, Vec vars)
        : w_(std::move(weights)), mu_(std::move(means)), s2_(std::move(vars)) {
        require(w_.size() >= 1, "mixture needs at least one component");
        require_dim(mu_.rows() == w_.size() && s2_.size() == w_.size(),
                    "component count mismatch across weights/means/variances");
        require((w_.array() > 0.0).all(), "mixture weights must be positive");
        require(std::abs(w_.sum() - 1.0) <= 1e-12, "mixture weights must sum to 1");
        require((s2_.array() > 0.0).all(), "component variances must be positive");
        w_ /= w_.sum();
    }
    Eigen::Index dim() const override { return mu_.cols(); }
    DenoiseOutput eps_theta(const Vec& x_t, double abar) const override {
        check_abar(abar);
        Vec score = marginal_score(x_t, abar);
        double sa = std::sqrt(abar), sr = std::sqrt(1.0 - abar);
        DenoiseOutput out;
        out.eps = -sr * score;
        out.x0_hat = (x_t + (1.0 - abar) * score) / sa;
        return out;
    }
    Vec x0_vjp(const Vec& x_t, double abar, const Vec& v) const override {
        check_abar(abar);
        // d x0_hat / d x_t = (I + (1-abar) H) / sqrt(abar), H the marginal
        // log-density Hessian; H v assembled from responsibilities
        auto [resp, comp_scores] = responsibilities(x_t, abar);
        Eigen::Index K = w_.size();
        Vec score = Vec::Zero(dim());
        for (Eigen::Index k = 0; k < K; ++k) score += resp[k] * comp_scores.col(k);
        double inv_var_mix = 0.0;
        for (Eigen::Index k = 0; k < K; ++k)
            inv_var_mix += resp[k] / (abar * s2_[k] + 1.0 - abar);
        Vec hv = -inv_var_mix * v;
        for (Eigen::Index k = 0; k < K; ++k)
            hv += resp[k] * comp_scores.col(k) * comp_scores.col(k).dot(v);
        hv -= score * score.dot(v);
        return (v + (1.0 - abar) * hv) / std::sqrt(abar);
    }
    const char* kind() const override { return "gmm"; }
    Eigen::Index components() const { return w_.size(); }
    const Vec& weights() const { return w_; }
    const Mat& means() const { return mu_; }
    const Vec& variances() const { return s2_; }

  private:
    Vec marginal_score(const Vec& x_t, double abar) const {
        auto [resp, comp_scores] = responsibilities(x_t, abar);
        Vec score = Vec::Zero(dim());
        for (Eigen::Index k = 0; k < w_.size(); ++k) score += resp[k] * comp_scores.col(k);
        return score;
    }
    // log-sum-exp responsibilities plus per-component scores -(x - m_k)/v_k
    std::pair<std::vector<double>, Mat> responsibilities(const Vec& x_t, double abar) const {
        Eigen::Index K = w_.size(), n = dim();
        std::vector<double> logw(static_cast<size_t>(K));
        Mat comp_scores(n, K);
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < K; ++k) {
            double vk = abar * s2_[k] + (1.0 - abar);
            Vec diff = x_t - std::sqrt(abar) * mu_.row(k).transpose();
            comp_scores.col(k) = -diff / vk;
            double lw = std::log(w_[k]) - 0.5 * n * std::log(2.0 * std::numbers::pi * vk) -
                        diff.squaredNorm() / (2.0 * vk);
            logw[static_cast<size_t>(k)] = lw;
            mx = std::max(mx, lw);
        }
        double denom = 0.0;
        for (auto& lw : logw) denom += std::exp(lw - mx);
        std::vector<double> resp(static_cast<size_t>(K));
        for (Eigen::Index k = 0; k < K; ++k)
            resp[static_cast<size_t>(k)] = std::exp(logw[static_cast<size_t>(k)] - mx) / denom;
        return {resp, comp_scores};
    }

    Vec w_;
    Mat mu_;  // K x n
    Vec s2_;
};

/// Adapts an arbitrary noise-prediction callback; the vjp falls back to
/// central finite differences (O(n) evaluations, intended for small n).
class BlackboxPrior final : public PriorImpl {
  public:
    using EpsFn = std::function<Vec(const Vec&, double)>;
    BlackboxPrior(Eigen::Index n, EpsFn fn) : n_(n), fn_(std::move(fn)) {
        require(n_ >= 1, "blackbox model needs a positive dimension");
        require(static_cast<bool>(fn_), "blackbox model needs a callback");
    }
    Eigen::Index dim() const override { return n_; }
    DenoiseOutput eps_theta(const Vec& x_t, double abar) const override {
        check_abar(abar);
        DenoiseOutput out;
        out.eps = fn_(x_t, abar);
        require_dim(out.eps.size() == n_, "blackbox callback returned wrong length");
        out.x0_hat = (x_t - std::sqrt(1.0 - abar) * out.eps) / std::sqrt(abar);
        return out;
    }
    Vec x0_vjp(const Vec& x_t, double abar, const Vec& v) const override {
        check_abar(abar);
        double h = 1e-4 * (1.0 + x_t.lpNorm<Eigen::Infinity>());
        Vec out(n_);
        Vec xp = x_t, xm = x_t;
        for (Eigen::Index i = 0; i < n_; ++i) {
            xp[i] += h;
            xm[i] -= h;
            Vec col = (eps_theta(xp, abar).x0_hat - eps_theta(xm, abar).x0_hat) / (2.0 * h);
            out[i] = col.dot(v);
            xp[i] = x_t[i];
            xm[i] = x_t[i];
        }
        return out;
    }
    const char* kind() const override { return "blackbox-adapter"; }

  private:
    Eigen::Index n_;
    EpsFn fn_;
};

}  // namespace detail

/// Noise predictor eps_theta(x_t, abar) with the denoised estimate and the
/// vector-Jacobian product of x0_hat. Analytic for gaussian/gmm priors.
class ScoreModel {
  public:
    ScoreModel() = default;
    explicit ScoreModel(std::shared_ptr<const detail::PriorImpl> impl) : impl_(std::move(impl)) {}

    Eigen::Index dim() const { return impl_->dim(); }
    std::string kind() const { return impl_->kind(); }
    bool valid() const { return impl_ != nullptr; }

    DenoiseOutput eps_theta(const Vec& x_t, double abar) const {
        require_dim(x_t.size() == dim(), "eps_theta: wrong signal length");
        return impl_->eps_theta(x_t, abar);
    }
    /// (d x0_hat / d x_t)^T v.
    Vec x0_vjp(const Vec& x_t, double abar, const Vec& v) const {
        require_dim(x_t.size() == dim() && v.size() == dim(), "x0_vjp: wrong length");
        return impl_->x0_vjp(x_t, abar, v);
    }

    std::shared_ptr<const detail::PriorImpl> impl() const { return impl_; }

  private:
    std::shared_ptr<const detail::PriorImpl> impl_;
};

inline ScoreModel gaussian_prior(Vec mean, Vec var_diag) {
    return ScoreModel(std::make_shared<detail::GaussianPrior>(std::move(mean), std::move(var_diag)));
}

/// Isotropic-component mixture: `means` is K x n, one row per component.
inline ScoreModel gmm_prior(Vec weights, Mat means, Vec vars) {
    return ScoreModel(
        std::make_shared<detail::GmmPrior>(std::move(weights), std::move(means), std::move(vars)));
}

inline ScoreModel blackbox_model(Eigen::Index n, detail::BlackboxPrior::EpsFn fn) {
    return ScoreModel(std::make_shared<detail::BlackboxPrior>(n, std::move(fn)));
}

}  // namespace adaps
