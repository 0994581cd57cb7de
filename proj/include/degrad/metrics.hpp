#pragma once

#include "degrad/image.hpp"

#include <cmath>
#include <stdexcept>

namespace degrad {

/// PSNR reported for identical images.
inline constexpr double psnr_cap_db = 100.0;

struct MetricReport {
    double mse = 0;
    double psnr = 0;
    double ssim = 0;
};

template <typename Scalar>
double mse(const Image<Scalar>& x, const Image<Scalar>& y) {
    require_same_shape(x, y, "mse");
    return double((x.vec() - y.vec()).squaredNorm()) / double(x.size());
}

/// 10 log10(peak^2 / mse), capped at psnr_cap_db when mse is zero.
inline double psnr_from_mse(double mse_value, double peak = 1.0) {
    if (mse_value <= 0) return psnr_cap_db;
    return std::min(psnr_cap_db, 10.0 * std::log10(peak * peak / mse_value));
}

template <typename Scalar>
double psnr(const Image<Scalar>& x, const Image<Scalar>& y, double peak = 1.0) {
    return psnr_from_mse(mse(x, y), peak);
}

namespace detail {

inline constexpr int ssim_window = 11;
inline constexpr double ssim_sigma = 1.5;

inline Eigen::VectorXd ssim_taps() {
    Eigen::VectorXd taps(ssim_window);
    const int r = ssim_window / 2;
    for (int i = 0; i < ssim_window; ++i)
        taps[i] = std::exp(-double((i - r) * (i - r)) / (2 * ssim_sigma * ssim_sigma));
    return taps / taps.sum();
}

// Separable Gaussian filter keeping only windows that fit inside the image.
inline Eigen::MatrixXd filter_valid(const Eigen::MatrixXd& in, const Eigen::VectorXd& taps) {
    const Eigen::Index n = taps.size();
    const Eigen::Index rows = in.rows() - n + 1, cols = in.cols() - n + 1;
    Eigen::MatrixXd horizontal(in.rows(), cols);
    for (Eigen::Index j = 0; j < cols; ++j) horizontal.col(j) = in.middleCols(j, n) * taps;
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) out.row(i) = taps.transpose() * horizontal.middleRows(i, n);
    return out;
}

} // namespace detail

/// Mean structural similarity over all 11x11 Gaussian (sigma 1.5) windows that
/// fit inside the image, averaged over channels.
template <typename Scalar>
double ssim(const Image<Scalar>& x, const Image<Scalar>& y, double peak = 1.0) {
    require_same_shape(x, y, "ssim");
    if (x.height() < detail::ssim_window || x.width() < detail::ssim_window)
        throw std::invalid_argument("ssim needs images of at least 11x11 pixels");
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const Eigen::VectorXd taps = detail::ssim_taps();
    double total = 0;
    for (int c = 0; c < x.channels(); ++c) {
        const Eigen::MatrixXd a = x.plane(c).template cast<double>();
        const Eigen::MatrixXd b = y.plane(c).template cast<double>();
        const Eigen::ArrayXXd mu_a = detail::filter_valid(a, taps).array();
        const Eigen::ArrayXXd mu_b = detail::filter_valid(b, taps).array();
        const Eigen::ArrayXXd var_a = detail::filter_valid(a.cwiseAbs2(), taps).array() - mu_a.square();
        const Eigen::ArrayXXd var_b = detail::filter_valid(b.cwiseAbs2(), taps).array() - mu_b.square();
        const Eigen::ArrayXXd cov = detail::filter_valid(a.cwiseProduct(b), taps).array() - mu_a * mu_b;
        const Eigen::ArrayXXd map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                                    ((mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2));
        total += map.mean();
    }
    return total / x.channels();
}

template <typename Scalar>
MetricReport measure(const Image<Scalar>& reconstruction, const Image<Scalar>& truth) {
    MetricReport r;
    r.mse = mse(reconstruction, truth);
    r.psnr = psnr_from_mse(r.mse);
    r.ssim = ssim(reconstruction, truth);
    return r;
}

} // namespace degrad
