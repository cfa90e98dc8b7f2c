#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "adaps/core.hpp"

namespace adaps {

// Tensor container: text header, ASCII dims line, then raw little-endian
// 64-bit floats in row-major order.
//
//   ADAPS-TENSOR v1
//   <ndims> <d1> <d2> ...
//   <payload>

namespace detail {
inline double to_little_endian(double v) {
    if constexpr (std::endian::native == std::endian::big) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        bits = __builtin_bswap64(bits);
        std::memcpy(&v, &bits, 8);
    }
    return v;
}
}  // namespace detail

inline void write_tensor(const std::string& path, const std::vector<Eigen::Index>& dims,
                         const Vec& data) {
    Eigen::Index total = 1;
    for (auto d : dims) total *= d;
    require_dim(total == data.size(), "tensor payload does not match dims");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "ADAPS-TENSOR v1\n" << dims.size();
    for (auto d : dims) f << " " << d;
    f << "\n";
    for (Eigen::Index i = 0; i < data.size(); ++i) {
        double v = detail::to_little_endian(data[i]);
        f.write(reinterpret_cast<const char*>(&v), sizeof(double));
    }
    if (!f) throw IoError("write failed: " + path);
}

inline Vec read_tensor(const std::string& path, std::vector<Eigen::Index>* dims_out = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string header;
    std::getline(f, header);
    if (header != "ADAPS-TENSOR v1") throw IoError(path + ": bad tensor header");
    size_t ndims = 0;
    f >> ndims;
    if (!f || ndims == 0 || ndims > 8) throw IoError(path + ": bad dims count");
    std::vector<Eigen::Index> dims(ndims);
    Eigen::Index total = 1;
    for (auto& d : dims) {
        f >> d;
        if (!f || d < 1) throw IoError(path + ": bad dimension");
        total *= d;
    }
    f.get();  // newline before payload
    Vec data(total);
    for (Eigen::Index i = 0; i < total; ++i) {
        double v;
        f.read(reinterpret_cast<char*>(&v), sizeof(double));
        if (!f) throw IoError(path + ": truncated payload");
        data[i] = detail::to_little_endian(v);
    }
    if (dims_out) *dims_out = dims;
    return data;
}

/// 8-bit grayscale export; values are mapped affinely from [lo, hi].
inline void write_pgm(const std::string& path, const Mat& img, double lo = -1.0, double hi = 1.0) {
    require(hi > lo, "pgm range must be nonempty");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
    for (Eigen::Index r = 0; r < img.rows(); ++r)
        for (Eigen::Index c = 0; c < img.cols(); ++c) {
            double t = (img(r, c) - lo) / (hi - lo);
            int byte = static_cast<int>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
            f.put(static_cast<char>(byte));
        }
    if (!f) throw IoError("write failed: " + path);
}

inline void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw IoError("cannot create directory " + path + ": " + ec.message());
}

}  // namespace adaps
