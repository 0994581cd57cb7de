#pragma once

#include "degrad/fft2.hpp"
#include "degrad/image.hpp"

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

namespace degrad {

/// Odd, square convolution kernel anchored at its center tap.
template <typename Scalar>
class Kernel {
public:
    explicit Kernel(MatrixX<Scalar> weights) : weights_(std::move(weights)) {
        if (weights_.rows() != weights_.cols() || weights_.rows() % 2 == 0)
            throw std::invalid_argument("kernel must be square with odd size");
        if (!weights_.allFinite()) throw std::invalid_argument("kernel weights must be finite");
    }

    static Kernel identity() { return Kernel(MatrixX<Scalar>::Ones(1, 1)); }

    int size() const { return int(weights_.rows()); }
    int radius() const { return size() / 2; }
    const MatrixX<Scalar>& weights() const { return weights_; }

    Kernel scaled(Scalar factor) const { return Kernel(weights_ * factor); }

    /// 180-degree rotation; the convolution with it is the adjoint.
    Kernel flipped() const { return Kernel(weights_.reverse().eval()); }

private:
    MatrixX<Scalar> weights_;
};

/// Samples exp(-(i^2 + j^2) / (2 variance)) on the centered integer grid and
/// normalizes the taps to sum to one.
template <typename Scalar = double>
Kernel<Scalar> make_gaussian_kernel(int size = 5, Scalar variance = Scalar(1)) {
    if (size < 1 || size % 2 == 0)
        throw std::invalid_argument("gaussian kernel size must be odd and positive");
    if (!(variance > Scalar(0))) throw std::invalid_argument("gaussian kernel variance must be positive");
    const int r = size / 2;
    MatrixX<Scalar> w(size, size);
    for (int a = 0; a < size; ++a)
        for (int b = 0; b < size; ++b) {
            const Scalar i = Scalar(a - r), j = Scalar(b - r);
            w(a, b) = std::exp(-(i * i + j * j) / (Scalar(2) * variance));
        }
    w /= w.sum();
    return Kernel<Scalar>(std::move(w));
}

namespace detail {

// out += sum_ab w(a,b) * x(i - sign*(a-r), j - sign*(b-r)) with circular wrap.
// sign = +1 is convolution, sign = -1 is correlation.
template <typename Scalar>
void circular_filter(const MatrixX<Scalar>& w, int sign, const ConstPlaneMap<Scalar>& x,
                     PlaneMap<Scalar> out) {
    const int h = int(x.rows()), wd = int(x.cols());
    const int r = int(w.rows()) / 2;
    for (int a = 0; a < w.rows(); ++a) {
        for (int b = 0; b < w.cols(); ++b) {
            const Scalar tap = w(a, b);
            if (tap == Scalar(0)) continue;
            const int di = ((sign * (a - r)) % h + h) % h;
            const int dj = ((sign * (b - r)) % wd + wd) % wd;
            for (int i = 0; i < h; ++i) {
                const int si = (i - di + h) % h;
                for (int j = 0; j < wd; ++j) out(i, j) += tap * x(si, (j - dj + wd) % wd);
            }
        }
    }
}

} // namespace detail

/// Circular 2-D convolution with a fixed kernel, applied per channel. The
/// operator is immutable after construction.
template <typename Scalar>
class BlurOperator {
public:
    explicit BlurOperator(Kernel<Scalar> kernel) : kernel_(std::move(kernel)) {}

    const Kernel<Scalar>& kernel() const { return kernel_; }

    Image<Scalar> apply(const Image<Scalar>& x) const { return filter(x, +1); }
    Image<Scalar> adjoint(const Image<Scalar>& y) const { return filter(y, -1); }

    /// A^T A x.
    Image<Scalar> normal(const Image<Scalar>& x) const { return adjoint(apply(x)); }

    /// DFT of the zero-padded kernel with its center moved to (0,0). These are
    /// the eigenvalues of the circulant operator on a height x width grid.
    ComplexMatrix<Scalar> spectrum(int height, int width) const {
        require_fits(height, width);
        MatrixX<Scalar> padded = MatrixX<Scalar>::Zero(height, width);
        const int r = kernel_.radius();
        for (int a = 0; a < kernel_.size(); ++a)
            for (int b = 0; b < kernel_.size(); ++b)
                padded(((a - r) % height + height) % height, ((b - r) % width + width) % width) +=
                    kernel_.weights()(a, b);
        return fft2_real(padded);
    }

private:
    void require_fits(int height, int width) const {
        if (height < kernel_.size() || width < kernel_.size())
            throw std::invalid_argument("image is smaller than the blur kernel");
    }

    Image<Scalar> filter(const Image<Scalar>& x, int sign) const {
        require_fits(x.height(), x.width());
        Image<Scalar> out = Image<Scalar>::zeros_like(x);
        for (int c = 0; c < x.channels(); ++c)
            detail::circular_filter(kernel_.weights(), sign, x.plane(c), out.plane(c));
        return out;
    }

    Kernel<Scalar> kernel_;
};

using GaussianBlur = BlurOperator<double>;

template <typename Scalar>
Image<Scalar> apply(const BlurOperator<Scalar>& A, const Image<Scalar>& x) {
    return A.apply(x);
}

template <typename Scalar>
Image<Scalar> adjoint(const BlurOperator<Scalar>& A, const Image<Scalar>& y) {
    return A.adjoint(y);
}

/// Gradient of ||Ax - d||^2 (unhalved): 2 A^T (Ax - d).
template <typename Scalar>
Image<Scalar> data_fidelity_grad(const BlurOperator<Scalar>& A, const Image<Scalar>& x,
                                 const Image<Scalar>& d) {
    require_same_shape(x, d, "data_fidelity_grad");
    Image<Scalar> residual = A.apply(x);
    residual.vec() -= d.vec();
    Image<Scalar> g = A.adjoint(residual);
    g.vec() *= Scalar(2);
    return g;
}

/// Power-iteration estimate of ||A||_2 on a single-channel height x width grid.
/// Uses sqrt(||B^k v|| / ||B^{k-1} v||) with B = A^T A, which is nondecreasing
/// in k for symmetric positive semidefinite B.
template <typename Scalar>
Scalar spectral_norm_estimate(const BlurOperator<Scalar>& A, int iters, int height, int width,
                              std::uint64_t seed = 0x5eed) {
    if (iters < 1) throw std::invalid_argument("spectral_norm_estimate needs at least one iteration");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Image<Scalar> v(1, height, width);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.vec()[i] = Scalar(normal(rng));
    v.vec().normalize();
    Scalar estimate = 0;
    for (int k = 0; k < iters; ++k) {
        Image<Scalar> bv = A.normal(v);
        const Scalar n = bv.vec().norm();
        estimate = std::sqrt(n);
        if (n == Scalar(0)) break;
        v.vec() = bv.vec() / n;
    }
    return estimate;
}

} // namespace degrad
