#pragma once

#include "degrad/blur.hpp"
#include "degrad/image.hpp"
#include "degrad/network.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace degrad {

struct SolverConfig {
    /// Bound on the rms residual ||T(x) - x|| / sqrt(n).
    double tol = 1e-6;
    int max_iters = 100;
    int anderson_memory = 5;
    double anderson_reg = 1e-4;
    double anderson_mixing = 1.0;

    void validate() const {
        if (!(tol > 0)) throw std::invalid_argument("solver tol must be positive");
        if (max_iters < 0) throw std::invalid_argument("solver max_iters must be nonnegative");
        if (anderson_memory < 1) throw std::invalid_argument("anderson memory must be at least 1");
        if (!(anderson_reg >= 0)) throw std::invalid_argument("anderson regularization must be nonnegative");
        if (!(anderson_mixing > 0 && anderson_mixing <= 1))
            throw std::invalid_argument("anderson mixing must lie in (0, 1]");
    }
};

template <typename State>
struct FixedPointResult {
    State x_star;
    /// residuals[k] = rms ||T(x^k) - x^k||.
    std::vector<double> residuals;
    int iters = 0;
    bool converged = false;
    /// Anderson iterations that fell back to a plain step.
    int fallback_steps = 0;
};

/// Raised when the residual stays more than 10x above its initial value for 5
/// consecutive iterations, or turns non-finite.
class NonContractionError : public std::runtime_error {
public:
    explicit NonContractionError(std::vector<double> residuals)
        : std::runtime_error("fixed-point iteration diverged (map is not contractive here)"),
          residuals_(std::move(residuals)) {}

    const std::vector<double>& residuals() const { return residuals_; }

private:
    std::vector<double> residuals_;
};

namespace detail {

class DivergenceMonitor {
public:
    static constexpr double growth = 10.0;
    static constexpr int patience = 5;

    void observe(const std::vector<double>& residuals) {
        const double r = residuals.back();
        if (!std::isfinite(r)) throw NonContractionError(residuals);
        if (r > growth * residuals.front()) {
            if (++streak_ >= patience) throw NonContractionError(residuals);
        } else {
            streak_ = 0;
        }
    }

private:
    int streak_ = 0;
};

} // namespace detail

/// Picard iteration x^{k+1} = T(x^k). `map` takes and returns a VectorX.
template <typename Scalar, typename Map>
FixedPointResult<VectorX<Scalar>> solve_picard(const Map& map, const VectorX<Scalar>& x0,
                                               const SolverConfig& cfg) {
    cfg.validate();
    FixedPointResult<VectorX<Scalar>> result;
    detail::DivergenceMonitor monitor;
    VectorX<Scalar> x = x0;
    for (int k = 0;; ++k) {
        VectorX<Scalar> fx = map(x);
        result.residuals.push_back(double(rms_norm(fx - x)));
        monitor.observe(result.residuals);
        if (result.residuals.back() <= cfg.tol || k == cfg.max_iters) {
            result.converged = result.residuals.back() <= cfg.tol;
            result.iters = k;
            result.x_star = std::move(x);
            return result;
        }
        x = std::move(fx);
    }
}

/// Anderson acceleration with memory m. The mixing weights solve
///   min ||G a||^2 + reg * (tr(G^T G) / m) ||a||^2   s.t.  sum(a) = 1,
/// where the columns of G are the last m residuals T(x_i) - x_i; the
/// regularizer is scaled by the mean squared residual so it is independent of
/// the residual magnitude. The next iterate is
///   beta * F a + (1 - beta) * X a.
/// With m = 1 and beta = 1 this is exactly Picard iteration.
template <typename Scalar, typename Map>
FixedPointResult<VectorX<Scalar>> solve_anderson(const Map& map, const VectorX<Scalar>& x0,
                                                 const SolverConfig& cfg) {
    cfg.validate();
    FixedPointResult<VectorX<Scalar>> result;
    detail::DivergenceMonitor monitor;
    std::deque<VectorX<Scalar>> xs, fs;
    const Scalar beta = Scalar(cfg.anderson_mixing);
    VectorX<Scalar> x = x0;
    for (int k = 0;; ++k) {
        VectorX<Scalar> fx = map(x);
        result.residuals.push_back(double(rms_norm(fx - x)));
        monitor.observe(result.residuals);
        if (result.residuals.back() <= cfg.tol || k == cfg.max_iters) {
            result.converged = result.residuals.back() <= cfg.tol;
            result.iters = k;
            result.x_star = std::move(x);
            return result;
        }
        xs.push_back(x);
        fs.push_back(std::move(fx));
        if (int(xs.size()) > cfg.anderson_memory) {
            xs.pop_front();
            fs.pop_front();
        }
        const Eigen::Index m = Eigen::Index(xs.size());
        MatrixX<Scalar> G(x.size(), m);
        for (Eigen::Index i = 0; i < m; ++i) G.col(i) = fs[i] - xs[i];
        MatrixX<Scalar> H = G.transpose() * G;
        const Scalar scale = H.trace() / Scalar(m);
        H.diagonal().array() += Scalar(cfg.anderson_reg) * scale;
        VectorX<Scalar> alpha = H.ldlt().solve(VectorX<Scalar>::Ones(m));
        const Scalar total = alpha.sum();
        const bool breakdown = !(scale > Scalar(0)) || !alpha.allFinite() || !std::isfinite(double(total)) ||
                               total == Scalar(0);
        if (breakdown) {
            ++result.fallback_steps;
            x = beta * fs.back() + (Scalar(1) - beta) * xs.back();
            continue;
        }
        alpha /= total;
        VectorX<Scalar> next = VectorX<Scalar>::Zero(x.size());
        for (Eigen::Index i = 0; i < m; ++i) {
            next += (beta * alpha[i]) * fs[i];
            if (beta != Scalar(1)) next += ((Scalar(1) - beta) * alpha[i]) * xs[i];
        }
        x = std::move(next);
    }
}

/// The DE-GRAD fixed-point map for one measurement:
///   T(x) = x - eta * (grad ||Ax - d||^2 + S(x)).
/// Holds references only; the caller keeps every piece alive.
template <typename Scalar>
struct DegradProblem {
    const Network<Scalar>& net;
    const ParamVector<Scalar>& theta;
    const BlurOperator<Scalar>& blur;
    const Image<Scalar>& measurement;
    Scalar eta;

    Image<Scalar> wrap(VectorX<Scalar> v) const { return measurement.with_data(std::move(v)); }
};

template <typename Scalar>
Image<Scalar> t_map(const DegradProblem<Scalar>& p, const Image<Scalar>& x) {
    if (!(p.eta >= Scalar(0))) throw std::invalid_argument("step size eta must be nonnegative");
    require_same_shape(x, p.measurement, "t_map");
    Image<Scalar> step = data_fidelity_grad(p.blur, x, p.measurement);
    step.vec() += forward(p.net, p.theta, x).vec();
    Image<Scalar> out = x;
    out.vec() -= p.eta * step.vec();
    return out;
}

template <typename Scalar>
Image<Scalar> t_map(const Network<Scalar>& net, const ParamVector<Scalar>& theta, const BlurOperator<Scalar>& A,
                    const Image<Scalar>& d, const Image<Scalar>& x, Scalar eta) {
    return t_map(DegradProblem<Scalar>{net, theta, A, d, eta}, x);
}

namespace detail {

template <typename Scalar>
auto vector_map(const DegradProblem<Scalar>& p) {
    return [&p](const VectorX<Scalar>& v) { return t_map(p, p.wrap(v)).vec(); };
}

template <typename Scalar>
FixedPointResult<Image<Scalar>> as_image_result(const DegradProblem<Scalar>& p,
                                                FixedPointResult<VectorX<Scalar>>&& r) {
    FixedPointResult<Image<Scalar>> out;
    out.x_star = p.wrap(std::move(r.x_star));
    out.residuals = std::move(r.residuals);
    out.iters = r.iters;
    out.converged = r.converged;
    out.fallback_steps = r.fallback_steps;
    return out;
}

} // namespace detail

template <typename Scalar>
FixedPointResult<Image<Scalar>> solve_picard(const DegradProblem<Scalar>& p, const Image<Scalar>& x0,
                                             const SolverConfig& cfg) {
    require_same_shape(x0, p.measurement, "solve_picard");
    return detail::as_image_result(p, solve_picard<Scalar>(detail::vector_map(p), x0.vec(), cfg));
}

template <typename Scalar>
FixedPointResult<Image<Scalar>> solve_anderson(const DegradProblem<Scalar>& p, const Image<Scalar>& x0,
                                               const SolverConfig& cfg) {
    require_same_shape(x0, p.measurement, "solve_anderson");
    return detail::as_image_result(p, solve_anderson<Scalar>(detail::vector_map(p), x0.vec(), cfg));
}

/// Residual history as CSV rows "iter,residual".
template <typename State>
void write_residual_csv(std::ostream& out, const FixedPointResult<State>& result) {
    out << "iter,residual\n";
    out.precision(17);
    for (std::size_t k = 0; k < result.residuals.size(); ++k) out << k << ',' << result.residuals[k] << '\n';
}

} // namespace degrad
