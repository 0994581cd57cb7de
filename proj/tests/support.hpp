#pragma once

// Shared helpers for the tests: random data and independent reference
// implementations used as oracles.

#include "degrad/image.hpp"

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <functional>
#include <random>

namespace testing {

using degrad::ImageTensor;

inline ImageTensor random_image(int c, int h, int w, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    ImageTensor x(c, h, w);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.vec()[i] = u(rng);
    return x;
}

inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double scale = std::max(b.norm(), 1e-300);
    return (a - b).norm() / scale;
}

/// Dense matrix of a linear map on images of a fixed shape, column k being
/// the image of the k-th unit vector.
inline Eigen::MatrixXd dense_matrix(const std::function<ImageTensor(const ImageTensor&)>& op, int c, int h, int w,
                                    int out_size = -1) {
    const Eigen::Index n = Eigen::Index(c) * h * w;
    Eigen::MatrixXd m;
    for (Eigen::Index k = 0; k < n; ++k) {
        ImageTensor e(c, h, w);
        e.vec()[k] = 1.0;
        const Eigen::VectorXd col = op(e).vec();
        if (m.size() == 0) m.resize(out_size < 0 ? col.size() : out_size, n);
        m.col(k) = col;
    }
    return m;
}

/// Textbook O(n^2) 2-D DFT, X(u,v) = sum x(i,j) exp(-2 pi i (ui/h + vj/w)).
inline Eigen::MatrixXcd direct_dft(const Eigen::MatrixXd& x) {
    const int h = int(x.rows()), w = int(x.cols());
    Eigen::MatrixXcd out(h, w);
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            std::complex<double> acc = 0;
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    acc += x(i, j) * std::polar(1.0, -two_pi * (double(u) * i / h + double(v) * j / w));
            out(u, v) = acc;
        }
    return out;
}

/// Central difference of a scalar function along direction v.
inline double central_difference(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& v, double h) {
    return (f(x + h * v) - f(x - h * v)) / (2 * h);
}

} // namespace testing
