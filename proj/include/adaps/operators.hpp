#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "adaps/core.hpp"
#include "adaps/fft.hpp"
#include "adaps/rng.hpp"

namespace adaps {

namespace detail {

class OpImpl {
  public:
    virtual ~OpImpl() = default;
    virtual Eigen::Index in_dim() const = 0;
    virtual Eigen::Index out_dim() const = 0;
    virtual Vec apply(const Vec& x) const = 0;
    virtual Vec adjoint(const Vec& v) const = 0;
    /// Solves (A A^T + lambda I) w = v in measurement space.
    virtual Vec gram_solve(double lambda, const Vec& v) const = 0;
    virtual const char* backend() const = 0;
    virtual bool supports_zero_lambda() const { return false; }
};

/// Conjugate gradients on w -> A(A^T w) + lambda w. Zero initial guess.
template <typename GramFn>
Vec cg_gram_solve(GramFn&& gram, const Vec& v, double lambda, int max_iter = 500,
                  double rel_tol = 1e-10) {
    const double bnorm = v.norm();
    if (bnorm == 0.0) return Vec::Zero(v.size());
    Vec x = Vec::Zero(v.size());
    Vec r = v;
    Vec p = r;
    double rr = r.squaredNorm();
    for (int it = 0; it < max_iter; ++it) {
        Vec Ap = gram(p) + lambda * p;
        double pAp = p.dot(Ap);
        if (!(pAp > 0.0)) throw NumericalError("CG encountered a non-positive curvature direction");
        double alpha = rr / pAp;
        x += alpha * p;
        r -= alpha * Ap;
        double rr_new = r.squaredNorm();
        if (std::sqrt(rr_new) <= rel_tol * bnorm) return x;
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    double res = r.norm() / bnorm;
    if (res > 1e-8)
        throw NumericalError("CG did not converge; final relative residual " + std::to_string(res));
    return x;
}

class IdentityOp final : public OpImpl {
  public:
    explicit IdentityOp(Eigen::Index n) : n_(n) {}
    Eigen::Index in_dim() const override { return n_; }
    Eigen::Index out_dim() const override { return n_; }
    Vec apply(const Vec& x) const override { return x; }
    Vec adjoint(const Vec& v) const override { return v; }
    Vec gram_solve(double lambda, const Vec& v) const override { return v / (1.0 + lambda); }
    const char* backend() const override { return "identity"; }
    bool supports_zero_lambda() const override { return true; }

  private:
    Eigen::Index n_;
};

class DenseOp final : public OpImpl {
  public:
    explicit DenseOp(Mat A) : A_(std::move(A)), svd_(A_, Eigen::ComputeThinU) {
        double smax = svd_.singularValues().size() ? svd_.singularValues()[0] : 0.0;
        full_row_rank_ = svd_.singularValues().size() == A_.rows() && smax > 0.0 &&
                         svd_.singularValues()[A_.rows() - 1] > 1e-12 * smax;
    }
    Eigen::Index in_dim() const override { return A_.cols(); }
    Eigen::Index out_dim() const override { return A_.rows(); }
    Vec apply(const Vec& x) const override { return A_ * x; }
    Vec adjoint(const Vec& v) const override { return A_.transpose() * v; }
    Vec gram_solve(double lambda, const Vec& v) const override {
        if (lambda == 0.0 && !full_row_rank_)
            throw SingularityError("gram solve with lambda=0 on a rank-deficient operator");
        // A A^T = U diag(s^2) U^T on the row space; orthogonal complement has
        // eigenvalue lambda.
        const Mat& U = svd_.matrixU();
        Vec coef = U.transpose() * v;
        Vec scaled = coef.array() / (svd_.singularValues().array().square() + lambda);
        Vec in_span = U * scaled;
        if (U.cols() == A_.rows()) return in_span;
        Vec residual = v - U * coef;
        return in_span + residual / lambda;
    }
    const char* backend() const override { return "dense-svd"; }
    bool supports_zero_lambda() const override { return full_row_rank_; }
    const Mat& matrix() const { return A_; }

  private:
    Mat A_;
    Eigen::BDCSVD<Mat> svd_;
    bool full_row_rank_ = false;
};

// Kernel laid out on the periodic grid with its center at index 0. Kernels
// wider than the grid wrap around (exact on the periodic model).
inline Vec embed_kernel_1d(const Vec& kernel, Eigen::Index n) {
    require(kernel.size() % 2 == 1, "kernel size must be odd");
    Eigen::Index p = kernel.size() / 2;
    Vec out = Vec::Zero(n);
    for (Eigen::Index i = -p; i <= p; ++i) {
        Eigen::Index idx = ((i % n) + n) % n;
        out[idx] += kernel[i + p];
    }
    return out;
}

inline Mat embed_kernel_2d(const Mat& kernel, Eigen::Index rows, Eigen::Index cols) {
    require(kernel.rows() % 2 == 1 && kernel.cols() % 2 == 1, "kernel sides must be odd");
    Eigen::Index pr = kernel.rows() / 2, pc = kernel.cols() / 2;
    Mat out = Mat::Zero(rows, cols);
    for (Eigen::Index r = -pr; r <= pr; ++r)
        for (Eigen::Index c = -pc; c <= pc; ++c) {
            Eigen::Index rr = ((r % rows) + rows) % rows;
            Eigen::Index cc = ((c % cols) + cols) % cols;
            out(rr, cc) += kernel(r + pr, c + pc);
        }
    return out;
}

/// Circular convolution, 1D. Periodic boundaries make the operator exactly
/// circulant, so the gram solve diagonalizes in frequency space.
class Circulant1dOp final : public OpImpl {
  public:
    Circulant1dOp(Eigen::Index n, const Vec& kernel)
        : n_(n), khat_(fft_forward(embed_kernel_1d(kernel, n))) {
        min_gain_ = khat_.array().abs().minCoeff();
    }
    Eigen::Index in_dim() const override { return n_; }
    Eigen::Index out_dim() const override { return n_; }
    Vec apply(const Vec& x) const override {
        return fft_inverse_real(khat_.cwiseProduct(fft_forward(x)));
    }
    Vec adjoint(const Vec& v) const override {
        return fft_inverse_real(khat_.conjugate().cwiseProduct(fft_forward(v)));
    }
    Vec gram_solve(double lambda, const Vec& v) const override {
        if (lambda == 0.0 && !supports_zero_lambda())
            throw SingularityError("circulant gram solve with lambda=0: kernel has a zero frequency");
        VecC vhat = fft_forward(v);
        VecC out = vhat.array() / (khat_.array().abs2() + lambda);
        return fft_inverse_real(out);
    }
    const char* backend() const override { return "circulant-fft"; }
    bool supports_zero_lambda() const override { return min_gain_ > 1e-12; }

  private:
    Eigen::Index n_;
    VecC khat_;
    double min_gain_ = 0.0;
};

/// Circular convolution on rows x cols images flattened row-major.
class Circulant2dOp final : public OpImpl {
  public:
    Circulant2dOp(Eigen::Index rows, Eigen::Index cols, const Mat& kernel)
        : rows_(rows), cols_(cols), khat_(fft2_forward(embed_kernel_2d(kernel, rows, cols))) {
        min_gain_ = khat_.array().abs().minCoeff();
    }
    Eigen::Index in_dim() const override { return rows_ * cols_; }
    Eigen::Index out_dim() const override { return rows_ * cols_; }
    Vec apply(const Vec& x) const override { return filter(x, false); }
    Vec adjoint(const Vec& v) const override { return filter(v, true); }
    Vec gram_solve(double lambda, const Vec& v) const override {
        if (lambda == 0.0 && !supports_zero_lambda())
            throw SingularityError("circulant gram solve with lambda=0: kernel has a zero frequency");
        MatC vhat = fft2_forward(unflatten(v));
        MatC out = vhat.array() / (khat_.array().abs2() + lambda);
        return flatten(fft2_inverse_real(out));
    }
    const char* backend() const override { return "circulant-fft"; }
    bool supports_zero_lambda() const override { return min_gain_ > 1e-12; }

  private:
    Mat unflatten(const Vec& x) const {
        Mat img(rows_, cols_);
        for (Eigen::Index r = 0; r < rows_; ++r)
            for (Eigen::Index c = 0; c < cols_; ++c) img(r, c) = x[r * cols_ + c];
        return img;
    }
    Vec flatten(const Mat& img) const {
        Vec x(rows_ * cols_);
        for (Eigen::Index r = 0; r < rows_; ++r)
            for (Eigen::Index c = 0; c < cols_; ++c) x[r * cols_ + c] = img(r, c);
        return x;
    }
    Vec filter(const Vec& x, bool conj) const {
        MatC xhat = fft2_forward(unflatten(x));
        MatC prod = conj ? MatC(khat_.conjugate().cwiseProduct(xhat))
                         : MatC(khat_.cwiseProduct(xhat));
        return flatten(fft2_inverse_real(prod));
    }

    Eigen::Index rows_, cols_;
    MatC khat_;
    double min_gain_ = 0.0;
};

/// Stride-s decimation; adjoint is zero insertion. 1D when rows==1.
class SubsampleOp final : public OpImpl {
  public:
    SubsampleOp(Eigen::Index rows, Eigen::Index cols, int stride)
        : rows_(rows), cols_(cols), stride_(stride) {
        require(stride >= 1, "stride must be >= 1");
        row_stride_ = rows_ == 1 ? 1 : stride_;  // rows == 1 means a 1D signal
        require(rows % row_stride_ == 0 && cols % stride == 0,
                "subsampling stride must divide the signal dimensions");
        out_rows_ = rows_ / row_stride_;
        out_cols_ = cols_ / stride_;
    }
    Eigen::Index in_dim() const override { return rows_ * cols_; }
    Eigen::Index out_dim() const override { return out_rows_ * out_cols_; }
    Vec apply(const Vec& x) const override {
        Vec y(out_dim());
        for (Eigen::Index r = 0; r < out_rows_; ++r)
            for (Eigen::Index c = 0; c < out_cols_; ++c)
                y[r * out_cols_ + c] = x[(r * row_stride_) * cols_ + c * stride_];
        return y;
    }
    Vec adjoint(const Vec& v) const override {
        Vec x = Vec::Zero(in_dim());
        for (Eigen::Index r = 0; r < out_rows_; ++r)
            for (Eigen::Index c = 0; c < out_cols_; ++c)
                x[(r * row_stride_) * cols_ + c * stride_] = v[r * out_cols_ + c];
        return x;
    }
    Vec gram_solve(double lambda, const Vec& v) const override {
        // S S^T = I on the retained samples
        return v / (1.0 + lambda);
    }
    const char* backend() const override { return "subsample"; }
    bool supports_zero_lambda() const override { return true; }

  private:
    Eigen::Index rows_, cols_;
    int stride_;
    int row_stride_ = 1;
    Eigen::Index out_rows_, out_cols_;
};

/// outer os inner composition; the gram solve falls back to matrix-free CG.
class ComposedOp final : public OpImpl {
  public:
    ComposedOp(std::shared_ptr<const OpImpl> outer, std::shared_ptr<const OpImpl> inner)
        : outer_(std::move(outer)), inner_(std::move(inner)) {
        require_dim(outer_->in_dim() == inner_->out_dim(), "composition dimensions do not chain");
    }
    Eigen::Index in_dim() const override { return inner_->in_dim(); }
    Eigen::Index out_dim() const override { return outer_->out_dim(); }
    Vec apply(const Vec& x) const override { return outer_->apply(inner_->apply(x)); }
    Vec adjoint(const Vec& v) const override { return inner_->adjoint(outer_->adjoint(v)); }
    Vec gram_solve(double lambda, const Vec& v) const override {
        if (lambda == 0.0)
            throw SingularityError("composed gram solve requires lambda > 0");
        return cg_gram_solve([this](const Vec& w) { return apply(adjoint(w)); }, v, lambda);
    }
    const char* backend() const override { return "composed-cg"; }

  private:
    std::shared_ptr<const OpImpl> outer_, inner_;
};

/// Wraps any impl but routes gram solves through CG; used to cross-check the
/// closed-form backends.
class CgWrapOp final : public OpImpl {
  public:
    explicit CgWrapOp(std::shared_ptr<const OpImpl> base) : base_(std::move(base)) {}
    Eigen::Index in_dim() const override { return base_->in_dim(); }
    Eigen::Index out_dim() const override { return base_->out_dim(); }
    Vec apply(const Vec& x) const override { return base_->apply(x); }
    Vec adjoint(const Vec& v) const override { return base_->adjoint(v); }
    Vec gram_solve(double lambda, const Vec& v) const override {
        if (lambda == 0.0) throw SingularityError("CG gram solve requires lambda > 0");
        return cg_gram_solve([this](const Vec& w) { return apply(adjoint(w)); }, v, lambda);
    }
    const char* backend() const override { return "cg-generic"; }

  private:
    std::shared_ptr<const OpImpl> base_;
};

}  // namespace detail

/// Linear measurement operator with adjoint and regularized gram solve
/// (A A^T + lambda I)^{-1}. Immutable and cheap to copy.
class LinearOperator {
  public:
    LinearOperator() = default;
    explicit LinearOperator(std::shared_ptr<const detail::OpImpl> impl) : impl_(std::move(impl)) {}

    Eigen::Index in_dim() const { return impl_->in_dim(); }
    Eigen::Index out_dim() const { return impl_->out_dim(); }
    std::string backend() const { return impl_->backend(); }
    bool supports_zero_lambda() const { return impl_->supports_zero_lambda(); }
    bool valid() const { return impl_ != nullptr; }

    Vec apply(const Vec& x) const {
        require_dim(x.size() == in_dim(), "apply: expected length " + std::to_string(in_dim()));
        return impl_->apply(x);
    }
    Vec adjoint(const Vec& v) const {
        require_dim(v.size() == out_dim(), "adjoint: expected length " + std::to_string(out_dim()));
        return impl_->adjoint(v);
    }
    Vec gram_solve(double lambda, const Vec& v) const {
        require_dim(v.size() == out_dim(), "gram_solve: expected length " + std::to_string(out_dim()));
        require(lambda >= 0.0, "gram regularizer must be >= 0");
        return impl_->gram_solve(lambda, v);
    }

    std::shared_ptr<const detail::OpImpl> impl() const { return impl_; }

  private:
    std::shared_ptr<const detail::OpImpl> impl_;
};

inline LinearOperator identity_operator(Eigen::Index n) {
    return LinearOperator(std::make_shared<detail::IdentityOp>(n));
}

inline LinearOperator dense_operator(Mat A) {
    return LinearOperator(std::make_shared<detail::DenseOp>(std::move(A)));
}

inline LinearOperator circulant_operator_1d(Eigen::Index n, const Vec& kernel) {
    return LinearOperator(std::make_shared<detail::Circulant1dOp>(n, kernel));
}

inline LinearOperator circulant_operator_2d(Eigen::Index rows, Eigen::Index cols, const Mat& kernel) {
    return LinearOperator(std::make_shared<detail::Circulant2dOp>(rows, cols, kernel));
}

inline LinearOperator subsample_operator(Eigen::Index rows, Eigen::Index cols, int stride) {
    return LinearOperator(std::make_shared<detail::SubsampleOp>(rows, cols, stride));
}

/// outer(inner(x)) with a CG gram solve.
inline LinearOperator compose(const LinearOperator& outer, const LinearOperator& inner) {
    return LinearOperator(std::make_shared<detail::ComposedOp>(outer.impl(), inner.impl()));
}

/// Same operator, gram solves forced through matrix-free CG.
inline LinearOperator with_cg_gram(const LinearOperator& op) {
    return LinearOperator(std::make_shared<detail::CgWrapOp>(op.impl()));
}

// --- kernels ---

inline Mat gaussian_kernel_2d(int size, double stddev) {
    require(size >= 1 && size % 2 == 1, "kernel size must be odd");
    require(stddev > 0.0, "kernel std must be positive");
    Mat k(size, size);
    int p = size / 2;
    for (int r = -p; r <= p; ++r)
        for (int c = -p; c <= p; ++c)
            k(r + p, c + p) = std::exp(-(r * r + c * c) / (2.0 * stddev * stddev));
    k /= k.sum();
    return k;
}

/// Keys cubic interpolation weights, a = -0.5.
inline double bicubic_weight(double x) {
    constexpr double a = -0.5;
    double ax = std::abs(x);
    if (ax < 1.0) return ((a + 2.0) * ax - (a + 3.0)) * ax * ax + 1.0;
    if (ax < 2.0) return (((ax - 5.0) * ax + 8.0) * ax - 4.0) * a;
    return 0.0;
}

/// Separable anti-alias filter for factor-s downsampling: the cubic profile
/// stretched by s, truncated to 4s-1 taps, renormalized to unit sum.
inline Vec bicubic_antialias_kernel_1d(int factor) {
    require(factor >= 1, "sr factor must be >= 1");
    int half = 2 * factor - 1;
    Vec k(2 * half + 1);
    for (int i = -half; i <= half; ++i) k[i + half] = bicubic_weight(double(i) / factor);
    k /= k.sum();
    return k;
}

inline Mat outer_kernel(const Vec& k) { return k * k.transpose(); }

/// Linear-trajectory motion kernel: bilinear splat of points along a segment
/// through the center at `angle_rad`; length scales with `intensity`.
inline Mat motion_blur_kernel(int size, double angle_rad, double intensity = 0.5) {
    require(size >= 1 && size % 2 == 1, "kernel size must be odd");
    require(intensity > 0.0 && intensity <= 1.0, "intensity must lie in (0,1]");
    Mat k = Mat::Zero(size, size);
    double half_len = 0.5 * intensity * (size - 1);
    double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
    int steps = std::max(size * 8, 64);
    for (int i = 0; i <= steps; ++i) {
        double t = -half_len + 2.0 * half_len * i / steps;
        double x = cx + t * std::cos(angle_rad);
        double y = cy + t * std::sin(angle_rad);
        int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
        double fx = x - x0, fy = y - y0;
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                int xi = x0 + dx, yi = y0 + dy;
                if (xi < 0 || xi >= size || yi < 0 || yi >= size) continue;
                double w = (dx ? fx : 1.0 - fx) * (dy ? fy : 1.0 - fy);
                k(yi, xi) += w;
            }
    }
    double s = k.sum();
    require(s > 0.0, "motion kernel degenerated to zero");
    k /= s;
    return k;
}

// --- kernel / matrix files ---

inline void write_grid_file(const std::string& path, const std::string& magic, const Mat& m) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << magic << "\n" << m.rows() << " " << m.cols() << "\n";
    f.precision(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) f << (c ? " " : "") << m(r, c);
        f << "\n";
    }
    if (!f) throw IoError("write failed: " + path);
}

inline Mat read_grid_file(const std::string& path, const std::string& magic) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string header;
    std::getline(f, header);
    if (header != magic) throw IoError(path + ": expected header '" + magic + "'");
    Eigen::Index rows = 0, cols = 0;
    f >> rows >> cols;
    if (!f || rows < 1 || cols < 1) throw IoError(path + ": bad dimensions line");
    Mat m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            if (!(f >> m(r, c))) throw IoError(path + ": truncated data");
    return m;
}

inline void write_kernel_file(const std::string& path, const Mat& k) {
    write_grid_file(path, "ADAPS-KERNEL v1", k);
}
inline Mat read_kernel_file(const std::string& path) { return read_grid_file(path, "ADAPS-KERNEL v1"); }
inline void write_matrix_file(const std::string& path, const Mat& m) {
    write_grid_file(path, "ADAPS-MATRIX v1", m);
}
inline Mat read_matrix_file(const std::string& path) { return read_grid_file(path, "ADAPS-MATRIX v1"); }

// --- factory ---

struct OperatorParams {
    Eigen::Index n = 0;       // identity signal length (or 1D circulant length)
    Eigen::Index side = 0;    // image side for 2D tasks
    int sr_factor = 4;
    int kernel_size = 5;
    double kernel_std = 10.0;
    double motion_angle = 0.6;
    double motion_intensity = 0.5;
    std::string kernel_path;  // explicit kernel file, used when non-empty
    Mat dense;                // explicit matrix for kind == "dense"
};

/// Builds the named operator with the cheapest valid gram-solve backend
/// (blur -> FFT, super-resolution -> CG on the composition, dense -> SVD).
inline LinearOperator make_operator(const std::string& kind, const OperatorParams& p) {
    if (kind == "identity") {
        require(p.n >= 1 || p.side >= 1, "identity: need n or side");
        return identity_operator(p.n >= 1 ? p.n : p.side * p.side);
    }
    if (kind == "dense") {
        if (!p.kernel_path.empty()) return dense_operator(read_matrix_file(p.kernel_path));
        require(p.dense.size() > 0, "dense: matrix required");
        return dense_operator(p.dense);
    }
    if (kind == "gaussian-blur") {
        require(p.side >= 1, "gaussian-blur: image side required");
        Mat k = p.kernel_path.empty() ? gaussian_kernel_2d(p.kernel_size, p.kernel_std)
                                      : read_kernel_file(p.kernel_path);
        require(k.sum() > 0, "blur kernel must have positive sum");
        return circulant_operator_2d(p.side, p.side, k / k.sum());
    }
    if (kind == "motion-blur") {
        require(p.side >= 1, "motion-blur: image side required");
        Mat k = p.kernel_path.empty()
                    ? motion_blur_kernel(p.kernel_size, p.motion_angle, p.motion_intensity)
                    : read_kernel_file(p.kernel_path);
        require(k.sum() > 0, "blur kernel must have positive sum");
        return circulant_operator_2d(p.side, p.side, k / k.sum());
    }
    if (kind == "sr-bicubic") {
        require(p.side >= 1, "sr-bicubic: image side required");
        require(p.sr_factor >= 1 && p.side % p.sr_factor == 0, "sr factor must divide image side");
        Vec k1 = bicubic_antialias_kernel_1d(p.sr_factor);
        require(k1.size() <= p.side, "image side too small for the anti-alias kernel");
        LinearOperator blur = circulant_operator_2d(p.side, p.side, outer_kernel(k1));
        LinearOperator sub = subsample_operator(p.side, p.side, p.sr_factor);
        return compose(sub, blur);
    }
    throw ConfigError("unknown operator kind '" + kind + "'");
}

// --- measurements ---

struct Measurement {
    Vec y;
    double sigma_y = 0.0;
};

/// y = A x0 + sigma_y * z with z drawn from the seeded generator.
inline Measurement synthesize(const LinearOperator& op, const Vec& x0, double sigma_y,
                              std::uint64_t rng_seed) {
    require(sigma_y >= 0.0, "noise std must be >= 0");
    Measurement m;
    m.sigma_y = sigma_y;
    m.y = op.apply(x0);
    if (sigma_y > 0.0) {
        Rng rng(rng_seed);
        m.y += sigma_y * rng.normal_vec(m.y.size());
    }
    if (!m.y.allFinite()) throw NumericalError("synthesized measurement is not finite");
    return m;
}

}  // namespace adaps
