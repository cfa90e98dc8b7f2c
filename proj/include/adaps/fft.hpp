#pragma once

#include <complex>
#include <unsupported/Eigen/FFT>
#include <vector>

#include "adaps/core.hpp"

namespace adaps {

using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;

// A fresh Eigen::FFT engine per call keeps these helpers safe for concurrent
// use; plan setup is cheap at the signal sizes handled here.

inline VecC fft_forward(const Vec& x) {
    Eigen::FFT<double> engine;
    std::vector<std::complex<double>> in(x.data(), x.data() + x.size()), out;
    engine.fwd(out, in);
    return Eigen::Map<const VecC>(out.data(), static_cast<Eigen::Index>(out.size()));
}

inline Vec fft_inverse_real(const VecC& f) {
    Eigen::FFT<double> engine;
    std::vector<std::complex<double>> in(f.data(), f.data() + f.size()), out;
    engine.inv(out, in);
    Vec x(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) x[i] = out[static_cast<size_t>(i)].real();
    return x;
}

/// 2D forward FFT of a rows x cols real image (row-major flattening elsewhere;
/// here an explicit matrix).
inline MatC fft2_forward(const Mat& img) {
    Eigen::FFT<double> engine;
    MatC freq(img.rows(), img.cols());
    std::vector<std::complex<double>> buf_in, buf_out;
    for (Eigen::Index r = 0; r < img.rows(); ++r) {
        std::vector<double> row(img.cols());
        for (Eigen::Index c = 0; c < img.cols(); ++c) row[static_cast<size_t>(c)] = img(r, c);
        engine.fwd(buf_out, row);
        for (Eigen::Index c = 0; c < img.cols(); ++c) freq(r, c) = buf_out[static_cast<size_t>(c)];
    }
    for (Eigen::Index c = 0; c < img.cols(); ++c) {
        buf_in.assign(freq.col(c).data(), freq.col(c).data() + freq.rows());
        engine.fwd(buf_out, buf_in);
        for (Eigen::Index r = 0; r < img.rows(); ++r) freq(r, c) = buf_out[static_cast<size_t>(r)];
    }
    return freq;
}

inline Mat fft2_inverse_real(const MatC& freq) {
    Eigen::FFT<double> engine;
    MatC tmp(freq.rows(), freq.cols());
    std::vector<std::complex<double>> buf_in, buf_out;
    for (Eigen::Index c = 0; c < freq.cols(); ++c) {
        buf_in.assign(freq.col(c).data(), freq.col(c).data() + freq.rows());
        engine.inv(buf_out, buf_in);
        for (Eigen::Index r = 0; r < freq.rows(); ++r) tmp(r, c) = buf_out[static_cast<size_t>(r)];
    }
    Mat img(freq.rows(), freq.cols());
    for (Eigen::Index r = 0; r < freq.rows(); ++r) {
        buf_in.resize(static_cast<size_t>(freq.cols()));
        for (Eigen::Index c = 0; c < freq.cols(); ++c) buf_in[static_cast<size_t>(c)] = tmp(r, c);
        engine.inv(buf_out, buf_in);
        for (Eigen::Index c = 0; c < freq.cols(); ++c) img(r, c) = buf_out[static_cast<size_t>(c)].real();
    }
    return img;
}

}  // namespace adaps
