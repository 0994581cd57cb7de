#pragma once

#include <Eigen/Core>
#include <unsupported/Eigen/FFT>

#include <complex>

namespace degrad {

template <typename Scalar>
using ComplexMatrix = Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

/// Unnormalized forward 2-D DFT, computed row-wise then column-wise.
template <typename Scalar>
ComplexMatrix<Scalar> fft2(const ComplexMatrix<Scalar>& in) {
    Eigen::FFT<Scalar> fft;
    ComplexMatrix<Scalar> out(in.rows(), in.cols());
    Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1> src, dst;
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
        src = in.row(i).transpose();
        fft.fwd(dst, src);
        out.row(i) = dst.transpose();
    }
    for (Eigen::Index j = 0; j < in.cols(); ++j) {
        src = out.col(j);
        fft.fwd(dst, src);
        out.col(j) = dst;
    }
    return out;
}

/// Inverse of fft2, including the 1/(rows*cols) factor.
template <typename Scalar>
ComplexMatrix<Scalar> ifft2(const ComplexMatrix<Scalar>& in) {
    Eigen::FFT<Scalar> fft;
    ComplexMatrix<Scalar> out(in.rows(), in.cols());
    Eigen::Matrix<std::complex<Scalar>, Eigen::Dynamic, 1> src, dst;
    for (Eigen::Index i = 0; i < in.rows(); ++i) {
        src = in.row(i).transpose();
        fft.inv(dst, src);
        out.row(i) = dst.transpose();
    }
    for (Eigen::Index j = 0; j < in.cols(); ++j) {
        src = out.col(j);
        fft.inv(dst, src);
        out.col(j) = dst;
    }
    return out;
}

template <typename Derived>
ComplexMatrix<typename Derived::Scalar> fft2_real(const Eigen::MatrixBase<Derived>& in) {
    using Scalar = typename Derived::Scalar;
    return fft2<Scalar>(in.template cast<std::complex<Scalar>>());
}

} // namespace degrad
