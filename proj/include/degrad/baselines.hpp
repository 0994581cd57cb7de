#pragma once

#include "degrad/blur.hpp"
#include "degrad/fft2.hpp"
#include "degrad/image.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <type_traits>
#include <utility>
#include <vector>

namespace degrad {

struct BaselineConfig {
    double lambda = 1e-2;
    int steps = 500;
    double step_size = 1.0;
    /// beta in sqrt(|grad x|^2 + beta^2).
    double tv_smoothing = 1e-3;
    int early_stop_patience = 20;

    void validate() const {
        if (!(lambda >= 0)) throw std::invalid_argument("baseline lambda must be nonnegative");
        if (steps < 0) throw std::invalid_argument("baseline steps must be nonnegative");
        if (!(step_size > 0)) throw std::invalid_argument("baseline step size must be positive");
        if (!(tv_smoothing > 0)) throw std::invalid_argument("tv smoothing must be positive");
        if (early_stop_patience < 1) throw std::invalid_argument("early stop patience must be positive");
    }
};

class IllConditionedError : public std::runtime_error {
public:
    explicit IllConditionedError(std::vector<std::pair<int, int>> frequencies)
        : std::runtime_error(describe(frequencies)), frequencies_(std::move(frequencies)) {}

    const std::vector<std::pair<int, int>>& frequencies() const { return frequencies_; }

private:
    static std::string describe(const std::vector<std::pair<int, int>>& f) {
        std::ostringstream out;
        out << "blur kernel vanishes at " << f.size() << " frequencies:";
        for (std::size_t i = 0; i < f.size() && i < 16; ++i) out << " (" << f[i].first << ',' << f[i].second << ')';
        if (f.size() > 16) out << " ...";
        return out.str();
    }

    std::vector<std::pair<int, int>> frequencies_;
};

class StepSizeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Exact inverse of the circular blur by division in the Fourier domain.
template <typename Scalar>
Image<Scalar> direct_inverse(const BlurOperator<Scalar>& A, const Image<Scalar>& d) {
    const ComplexMatrix<Scalar> spectrum = A.spectrum(d.height(), d.width());
    std::vector<std::pair<int, int>> bad;
    for (int u = 0; u < spectrum.rows(); ++u)
        for (int v = 0; v < spectrum.cols(); ++v)
            if (std::abs(spectrum(u, v)) < Scalar(1e-12)) bad.emplace_back(u, v);
    if (!bad.empty()) throw IllConditionedError(std::move(bad));
    Image<Scalar> x = Image<Scalar>::zeros_like(d);
    for (int c = 0; c < d.channels(); ++c) {
        const ComplexMatrix<Scalar> ratio = fft2_real(MatrixX<Scalar>(d.plane(c))).cwiseQuotient(spectrum);
        x.plane(c) = ifft2(ratio).real();
    }
    return x;
}

/// ||A||_2 of the circular blur on this grid (largest |DFT| of the kernel).
template <typename Scalar>
Scalar blur_norm(const BlurOperator<Scalar>& A, int height, int width) {
    return A.spectrum(height, width).cwiseAbs().maxCoeff();
}

namespace detail {

// A^T (A x - d).
template <typename Scalar>
VectorX<Scalar> least_squares_grad(const BlurOperator<Scalar>& A, const Image<Scalar>& x, const Image<Scalar>& d) {
    Image<Scalar> r = A.apply(x);
    r.vec() -= d.vec();
    return A.adjoint(r).vec();
}

template <typename Scalar>
void guard_step(Scalar step, Scalar lipschitz) {
    if (step >= Scalar(2) / lipschitz)
        throw StepSizeError("step size exceeds 2/L for this objective; gradient descent would diverge");
}

// Circular forward differences and the smoothed-TV value/gradient.
template <typename Scalar>
Scalar smoothed_tv(const Image<Scalar>& x, std::type_identity_t<Scalar> beta,
                   std::type_identity_t<VectorX<Scalar>>* grad = nullptr) {
    Scalar total = 0;
    if (grad) grad->setZero(x.size());
    const int h = x.height(), w = x.width();
    for (int c = 0; c < x.channels(); ++c) {
        const auto p = x.plane(c);
        Image<Scalar> px(1, h, w), py(1, h, w);
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j) {
                const Scalar gx = p(i, (j + 1) % w) - p(i, j);
                const Scalar gy = p((i + 1) % h, j) - p(i, j);
                const Scalar m = std::sqrt(gx * gx + gy * gy + beta * beta);
                total += m;
                px(0, i, j) = gx / m;
                py(0, i, j) = gy / m;
            }
        if (!grad) continue;
        Eigen::Map<VectorX<Scalar>> g(grad->data() + c * x.pixels_per_channel(), x.pixels_per_channel());
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                g[Eigen::Index(i) * w + j] = -px(0, i, j) - py(0, i, j) + px(0, i, (j - 1 + w) % w) +
                                              py(0, (i - 1 + h) % h, j);
    }
    return total;
}

} // namespace detail

/// Gradient descent on 1/2 ||Ax - d||^2 + lambda/2 ||x||^2 from x0 = d.
template <typename Scalar>
Image<Scalar> tikhonov_gd(const BlurOperator<Scalar>& A, const Image<Scalar>& d, const BaselineConfig& cfg) {
    cfg.validate();
    const Scalar norm = blur_norm(A, d.height(), d.width());
    const Scalar step = Scalar(cfg.step_size), lambda = Scalar(cfg.lambda);
    detail::guard_step(step, norm * norm + lambda);
    Image<Scalar> x = d;
    for (int k = 0; k < cfg.steps; ++k) {
        VectorX<Scalar> g = detail::least_squares_grad(A, x, d);
        if (lambda != Scalar(0)) g += lambda * x.vec();
        x.vec() -= step * g;
    }
    return x;
}

/// Objective of tv_gd: 1/2 ||Ax - d||^2 + lambda * sum sqrt(|grad x|^2 + beta^2).
template <typename Scalar>
Scalar tv_objective(const BlurOperator<Scalar>& A, const Image<Scalar>& d, const Image<Scalar>& x,
                    Scalar lambda, Scalar beta) {
    Image<Scalar> r = A.apply(x);
    r.vec() -= d.vec();
    Scalar value = Scalar(0.5) * r.vec().squaredNorm();
    if (lambda != Scalar(0)) value += lambda * detail::smoothed_tv(x, beta);
    return value;
}

/// Gradient descent on the smoothed-TV objective from x0 = d, with circular
/// forward differences. Stops early once the objective decreased by less than
/// 1e-6 (relative) over the last early_stop_patience steps.
template <typename Scalar>
Image<Scalar> tv_gd(const BlurOperator<Scalar>& A, const Image<Scalar>& d, const BaselineConfig& cfg,
                    std::vector<double>* objective_trace = nullptr) {
    cfg.validate();
    const Scalar norm = blur_norm(A, d.height(), d.width());
    const Scalar step = Scalar(cfg.step_size), lambda = Scalar(cfg.lambda), beta = Scalar(cfg.tv_smoothing);
    detail::guard_step(step, norm * norm + Scalar(8) * lambda / beta);
    Image<Scalar> x = d;
    std::vector<double> trace{double(tv_objective(A, d, x, lambda, beta))};
    VectorX<Scalar> tv_grad;
    for (int k = 0; k < cfg.steps; ++k) {
        VectorX<Scalar> g = detail::least_squares_grad(A, x, d);
        if (lambda != Scalar(0)) {
            detail::smoothed_tv(x, beta, &tv_grad);
            g += lambda * tv_grad;
        }
        x.vec() -= step * g;
        trace.push_back(double(tv_objective(A, d, x, lambda, beta)));
        const std::size_t n = trace.size();
        if (n > std::size_t(cfg.early_stop_patience)) {
            const double before = trace[n - 1 - cfg.early_stop_patience];
            if (before - trace.back() < 1e-6 * std::abs(before)) break;
        }
    }
    if (objective_trace) *objective_trace = std::move(trace);
    return x;
}

/// Unregularized least-squares gradient descent from x0 = d, stopped after a
/// fixed number of steps.
template <typename Scalar>
Image<Scalar> plain_gd_early_stop(const BlurOperator<Scalar>& A, const Image<Scalar>& d, int steps,
                                  double step_size = 1.0) {
    if (steps < 0) throw std::invalid_argument("steps must be nonnegative");
    const Scalar norm = blur_norm(A, d.height(), d.width());
    detail::guard_step(Scalar(step_size), norm * norm);
    Image<Scalar> x = d;
    for (int k = 0; k < steps; ++k) x.vec() -= Scalar(step_size) * detail::least_squares_grad(A, x, d);
    return x;
}

} // namespace degrad
