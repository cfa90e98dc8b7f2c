#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "adaps/core.hpp"
#include "adaps/operators.hpp"
#include "adaps/priors.hpp"

namespace adaps {

// Everything in this header is reference machinery: dense linear algebra and
// brute-force quadrature only, independent of the operator backends and the
// guidance code paths it is used to check.

/// Materializes any linear operator column by column.
inline Mat dense_matrix(const LinearOperator& op) {
    Mat A(op.out_dim(), op.in_dim());
    Vec e = Vec::Zero(op.in_dim());
    for (Eigen::Index j = 0; j < op.in_dim(); ++j) {
        e[j] = 1.0;
        A.col(j) = op.apply(e);
        e[j] = 0.0;
    }
    return A;
}

struct GaussianPosterior {
    Vec mean;
    Mat cov;
};

/// Exact conjugate posterior for a diagonal Gaussian prior and a linear
/// Gaussian likelihood, by direct dense factorization.
inline GaussianPosterior gaussian_posterior(const Vec& mu0, const Vec& var0, const Mat& A,
                                            const Vec& y, double sigma_y) {
    require(sigma_y > 0.0, "posterior needs sigma_y > 0");
    require_dim(A.cols() == mu0.size() && A.rows() == y.size() && var0.size() == mu0.size(),
                "gaussian_posterior: dimension mismatch");
    require((var0.array() > 0.0).all(), "prior variances must be positive");
    Mat precision = (1.0 / var0.array()).matrix().asDiagonal();
    precision += A.transpose() * A / (sigma_y * sigma_y);
    Eigen::LDLT<Mat> ldlt(precision);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw NumericalError("posterior precision is not positive definite");
    GaussianPosterior post;
    Vec rhs = (mu0.array() / var0.array()).matrix() + A.transpose() * y / (sigma_y * sigma_y);
    post.mean = ldlt.solve(rhs);
    post.cov = ldlt.solve(Mat::Identity(mu0.size(), mu0.size()));
    post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
    return post;
}

/// Discrete representation of a 1D or 2D density on a tensor grid. Weights
/// are normalized node masses (trapezoid coefficients folded in).
struct QuadraturePosterior {
    std::vector<Vec> axes;  // one or two axes of nodes
    Vec weights;            // row-major over the axes, sums to 1

    int dim() const { return static_cast<int>(axes.size()); }

    Vec mean() const {
        Vec m = Vec::Zero(dim());
        for_each_node([&](Eigen::Index flat, const Vec& x) { m += weights[flat] * x; });
        return m;
    }
    Vec variance() const {
        Vec m = mean();
        Vec v = Vec::Zero(dim());
        for_each_node([&](Eigen::Index flat, const Vec& x) {
            v.array() += weights[flat] * (x - m).array().square();
        });
        return v;
    }

    /// Marginal along one axis (2D only; returns a 1D posterior).
    QuadraturePosterior marginal(int axis) const {
        require(dim() == 2 && (axis == 0 || axis == 1), "marginal needs a 2D posterior");
        QuadraturePosterior out;
        out.axes = {axes[static_cast<size_t>(axis)]};
        Eigen::Index n0 = axes[0].size(), n1 = axes[1].size();
        out.weights = Vec::Zero(out.axes[0].size());
        for (Eigen::Index i = 0; i < n0; ++i)
            for (Eigen::Index j = 0; j < n1; ++j)
                out.weights[axis == 0 ? i : j] += weights[i * n1 + j];
        return out;
    }

    /// Inverse-CDF draw (1D only), used to sample reference distributions.
    double quantile(double u) const {
        require(dim() == 1, "quantile needs a 1D posterior");
        double acc = 0.0;
        for (Eigen::Index i = 0; i < weights.size(); ++i) {
            acc += weights[i];
            if (acc >= u) return axes[0][i];
        }
        return axes[0][axes[0].size() - 1];
    }

    template <typename F>
    void for_each_node(F&& f) const {
        if (dim() == 1) {
            Vec x(1);
            for (Eigen::Index i = 0; i < axes[0].size(); ++i) {
                x[0] = axes[0][i];
                f(i, x);
            }
        } else {
            Vec x(2);
            Eigen::Index n1 = axes[1].size();
            for (Eigen::Index i = 0; i < axes[0].size(); ++i)
                for (Eigen::Index j = 0; j < n1; ++j) {
                    x[0] = axes[0][i];
                    x[1] = axes[1][j];
                    f(i * n1 + j, x);
                }
        }
    }
};

namespace detail {

/// log prior density extracted from an analytic score model.
inline double prior_log_density(const ScoreModel& prior, const Vec& x) {
    if (auto g = std::dynamic_pointer_cast<const GaussianPrior>(prior.impl())) {
        double lp = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            double d = x[i] - g->mean()[i];
            lp += -0.5 * std::log(2.0 * std::numbers::pi * g->variances()[i]) -
                  d * d / (2.0 * g->variances()[i]);
        }
        return lp;
    }
    if (auto m = std::dynamic_pointer_cast<const GmmPrior>(prior.impl())) {
        double mx = -std::numeric_limits<double>::infinity();
        std::vector<double> terms;
        for (Eigen::Index k = 0; k < m->components(); ++k) {
            double v = m->variances()[k];
            double q = (x - m->means().row(k).transpose()).squaredNorm() / (2.0 * v);
            double lw = std::log(m->weights()[k]) -
                        0.5 * x.size() * std::log(2.0 * std::numbers::pi * v) - q;
            terms.push_back(lw);
            mx = std::max(mx, lw);
        }
        double s = 0.0;
        for (double t : terms) s += std::exp(t - mx);
        return mx + std::log(s);
    }
    throw ConfigError("quadrature oracle needs an analytic (gaussian/gmm) prior");
}

/// Rough support of the prior for the provisional quadrature pass.
inline void prior_support(const ScoreModel& prior, Vec& lo, Vec& hi) {
    Eigen::Index n = prior.dim();
    lo = Vec::Constant(n, std::numeric_limits<double>::max());
    hi = Vec::Constant(n, std::numeric_limits<double>::lowest());
    if (auto g = std::dynamic_pointer_cast<const GaussianPrior>(prior.impl())) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double s = std::sqrt(g->variances()[i]);
            lo[i] = g->mean()[i] - 12.0 * s;
            hi[i] = g->mean()[i] + 12.0 * s;
        }
        return;
    }
    if (auto m = std::dynamic_pointer_cast<const GmmPrior>(prior.impl())) {
        for (Eigen::Index k = 0; k < m->components(); ++k) {
            double s = std::sqrt(m->variances()[k]);
            for (Eigen::Index i = 0; i < n; ++i) {
                lo[i] = std::min(lo[i], m->means()(k, i) - 12.0 * s);
                hi[i] = std::max(hi[i], m->means()(k, i) + 12.0 * s);
            }
        }
        return;
    }
    throw ConfigError("quadrature oracle needs an analytic (gaussian/gmm) prior");
}

template <typename LogDensity>
QuadraturePosterior build_quadrature(const LogDensity& logp, const Vec& lo0, const Vec& hi0,
                                     int dim) {
    const Eigen::Index nodes_coarse = dim == 1 ? 2048 : 128;
    const Eigen::Index nodes_final = dim == 1 ? 4096 : 256;

    auto evaluate = [&](const std::vector<Vec>& axes) {
        QuadraturePosterior q;
        q.axes = axes;
        Eigen::Index total = axes[0].size() * (dim == 2 ? axes[1].size() : 1);
        Vec logw(total);
        q.weights = Vec::Zero(total);
        double mx = -std::numeric_limits<double>::infinity();
        q.for_each_node([&](Eigen::Index flat, const Vec& x) {
            double lw = logp(x);
            // trapezoid end correction per axis
            for (int a = 0; a < dim; ++a) {
                Eigen::Index idx = dim == 1 ? flat
                                            : (a == 0 ? flat / axes[1].size() : flat % axes[1].size());
                if (idx == 0 || idx == axes[static_cast<size_t>(a)].size() - 1)
                    lw += std::log(0.5);
            }
            logw[flat] = lw;
            mx = std::max(mx, lw);
        });
        for (Eigen::Index i = 0; i < total; ++i) q.weights[i] = std::exp(logw[i] - mx);
        double s = q.weights.sum();
        if (!(s > 0.0)) throw ResolutionError("quadrature grid carries no posterior mass");
        q.weights /= s;
        return q;
    };

    auto linspace = [](double a, double b, Eigen::Index n) {
        Vec v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = a + (b - a) * i / double(n - 1);
        return v;
    };

    std::vector<Vec> coarse_axes;
    for (int a = 0; a < dim; ++a) coarse_axes.push_back(linspace(lo0[a], hi0[a], nodes_coarse));
    QuadraturePosterior coarse = evaluate(coarse_axes);
    Vec m = coarse.mean(), v = coarse.variance();

    std::vector<Vec> axes;
    for (int a = 0; a < dim; ++a) {
        double s = std::sqrt(std::max(v[a], 1e-30));
        axes.push_back(linspace(m[a] - 8.0 * s, m[a] + 8.0 * s, nodes_final));
    }
    QuadraturePosterior fine = evaluate(axes);

    // mass escaping the refined window means the coarse moments were off
    double edge = 0.0;
    if (dim == 1) {
        edge = fine.weights[0] + fine.weights[fine.weights.size() - 1];
    } else {
        Eigen::Index n1 = axes[1].size();
        for (Eigen::Index j = 0; j < n1; ++j)
            edge += fine.weights[j] + fine.weights[(axes[0].size() - 1) * n1 + j];
        for (Eigen::Index i = 0; i < axes[0].size(); ++i)
            edge += fine.weights[i * n1] + fine.weights[i * n1 + n1 - 1];
    }
    if (edge > 1e-8) throw ResolutionError("posterior mass at the quadrature boundary");
    return fine;
}

}  // namespace detail

/// Brute-force measurement posterior p(x0 | y) on a grid (1D/2D priors).
inline QuadraturePosterior posterior_quadrature(const ScoreModel& prior, const Mat& A, const Vec& y,
                                                double sigma_y) {
    int dim = static_cast<int>(prior.dim());
    require(dim == 1 || dim == 2, "quadrature posterior supports 1D/2D only");
    require(sigma_y > 0.0, "quadrature posterior needs sigma_y > 0");
    require_dim(A.cols() == dim && A.rows() == y.size(), "operator/measurement mismatch");
    auto logp = [&](const Vec& x) {
        double lik = -(A * x - y).squaredNorm() / (2.0 * sigma_y * sigma_y);
        return detail::prior_log_density(prior, x) + lik;
    };
    Vec lo, hi;
    detail::prior_support(prior, lo, hi);
    return detail::build_quadrature(logp, lo, hi, dim);
}

/// Conditional posterior p(x0 | x_t, y) on a grid.
inline QuadraturePosterior conditional_quadrature(const ScoreModel& prior, const Mat& A,
                                                  const Vec& y, double sigma_y, const Vec& x_t,
                                                  double abar) {
    int dim = static_cast<int>(prior.dim());
    require(dim == 1 || dim == 2, "quadrature posterior supports 1D/2D only");
    require(abar > 0.0 && abar < 1.0, "conditional quadrature needs 0 < abar < 1");
    double fwd_var = 1.0 - abar;
    auto logp = [&](const Vec& x) {
        double lp = detail::prior_log_density(prior, x);
        lp += -(x_t - std::sqrt(abar) * x).squaredNorm() / (2.0 * fwd_var);
        if (sigma_y > 0.0) lp += -(A * x - y).squaredNorm() / (2.0 * sigma_y * sigma_y);
        return lp;
    };
    Vec lo, hi;
    detail::prior_support(prior, lo, hi);
    return detail::build_quadrature(logp, lo, hi, dim);
}

/// Exact conditional noise eps* = (x_t - sqrt(abar) E[x0|x_t,y]) / sqrt(1-abar).
/// Closed form for Gaussian priors, quadrature for 1D/2D mixtures.
inline Vec exact_eps_star(const ScoreModel& prior, const Mat& A, const Vec& y, double sigma_y,
                          const Vec& x_t, double abar) {
    require(abar > 0.0 && abar < 1.0, "eps* needs 0 < abar < 1");
    require(sigma_y > 0.0, "eps* oracle needs sigma_y > 0");
    Vec cond_mean;
    if (auto g = std::dynamic_pointer_cast<const detail::GaussianPrior>(prior.impl())) {
        const Vec& mu0 = g->mean();
        const Vec& var0 = g->variances();
        Mat precision = (1.0 / var0.array()).matrix().asDiagonal();
        precision += (abar / (1.0 - abar)) * Mat::Identity(x_t.size(), x_t.size());
        precision += A.transpose() * A / (sigma_y * sigma_y);
        Vec rhs = (mu0.array() / var0.array()).matrix() +
                  std::sqrt(abar) / (1.0 - abar) * x_t +
                  A.transpose() * y / (sigma_y * sigma_y);
        Eigen::LDLT<Mat> ldlt(precision);
        if (ldlt.info() != Eigen::Success)
            throw NumericalError("conditional precision factorization failed");
        cond_mean = ldlt.solve(rhs);
    } else {
        cond_mean = conditional_quadrature(prior, A, y, sigma_y, x_t, abar).mean();
    }
    return (x_t - std::sqrt(abar) * cond_mean) / std::sqrt(1.0 - abar);
}

/// Wasserstein-1 distance between an empirical sample and a 1D quadrature
/// posterior: both are treated as atomic measures and the CDF difference is
/// integrated exactly over the merged support.
inline double wasserstein1_1d(const std::vector<double>& samples,
                              const QuadraturePosterior& post) {
    require(post.dim() == 1, "wasserstein1_1d needs a 1D posterior");
    require(samples.size() >= 100, "need at least 100 samples");
    struct Atom {
        double x;
        double p;  // empirical mass
        double q;  // posterior mass
    };
    std::vector<Atom> atoms;
    atoms.reserve(samples.size() + static_cast<size_t>(post.weights.size()));
    double w_emp = 1.0 / static_cast<double>(samples.size());
    for (double s : samples) atoms.push_back({s, w_emp, 0.0});
    for (Eigen::Index i = 0; i < post.weights.size(); ++i)
        atoms.push_back({post.axes[0][i], 0.0, post.weights[i]});
    std::sort(atoms.begin(), atoms.end(), [](const Atom& a, const Atom& b) { return a.x < b.x; });
    double dist = 0.0, F = 0.0, G = 0.0;
    for (size_t i = 0; i + 1 < atoms.size(); ++i) {
        F += atoms[i].p;
        G += atoms[i].q;
        dist += std::abs(F - G) * (atoms[i + 1].x - atoms[i].x);
    }
    return dist;
}

}  // namespace adaps
