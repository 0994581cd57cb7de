#pragma once

#include "degrad/conjugate_gradient.hpp"
#include "degrad/counters.hpp"
#include "degrad/fixed_point.hpp"
#include "degrad/network.hpp"

#include <stdexcept>
#include <string>

namespace degrad {

enum class GradKind { jfb, jacobian_cg, neumann };

struct GradScheme {
    GradKind kind = GradKind::jfb;
    double cg_tol = 1e-8;
    int cg_max_iters = 200;
    int neumann_k = 0;

    static GradScheme jfb() { return {}; }
    static GradScheme jacobian_cg(double tol = 1e-8, int max_iters = 200) {
        return {GradKind::jacobian_cg, tol, max_iters, 0};
    }
    static GradScheme neumann(int k) { return {GradKind::neumann, 1e-8, 200, k}; }

    void validate() const {
        if (!(cg_tol > 0)) throw std::invalid_argument("cg_tol must be positive");
        if (cg_max_iters < 0) throw std::invalid_argument("cg_max_iters must be nonnegative");
        if (neumann_k < 0) throw std::invalid_argument("neumann_k must be nonnegative");
    }
};

inline std::string to_string(GradKind kind) {
    switch (kind) {
    case GradKind::jfb: return "jfb";
    case GradKind::jacobian_cg: return "jacobian_cg";
    case GradKind::neumann: return "neumann";
    }
    return "unknown";
}

inline GradKind parse_grad_kind(const std::string& name) {
    if (name == "jfb") return GradKind::jfb;
    if (name == "jacobian_cg" || name == "jacobian-cg" || name == "cg") return GradKind::jacobian_cg;
    if (name == "neumann") return GradKind::neumann;
    throw std::invalid_argument("unknown gradient scheme: " + name);
}

template <typename Scalar>
struct GradResult {
    ParamVector<Scalar> grad;
    /// Adjoint w solving w J = dl/dx* (exactly or approximately, per scheme).
    Image<Scalar> adjoint;
    GradScheme scheme;
    int cg_iters = 0;
    double residual = 0;
};

class PreconditionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class CgNotConvergedError : public std::runtime_error {
public:
    CgNotConvergedError(double residual, int iters)
        : std::runtime_error("conjugate gradient did not reach its tolerance (relative residual " +
                             std::to_string(residual) + " after " + std::to_string(iters) + " iterations)"),
          residual_(residual), iters_(iters) {}

    double residual() const { return residual_; }
    int iters() const { return iters_; }

private:
    double residual_;
    int iters_;
};

/// l(x*, x) = ||x* - x||^2 / n.
template <typename Scalar>
Scalar mse_loss(const Image<Scalar>& x_star, const Image<Scalar>& x_true) {
    require_same_shape(x_star, x_true, "mse_loss");
    return (x_star.vec() - x_true.vec()).squaredNorm() / Scalar(x_star.size());
}

/// dl/dx* = (2/n)(x* - x).
template <typename Scalar>
Image<Scalar> loss_grad_at_fixed_point(const Image<Scalar>& x_star, const Image<Scalar>& x_true) {
    require_same_shape(x_star, x_true, "loss_grad_at_fixed_point");
    return x_star.with_data((Scalar(2) / Scalar(x_star.size())) * (x_star.vec() - x_true.vec()));
}

/// Derivatives of the DE-GRAD map at one point x*,
///   dT/dx = I - eta (2 A^T A + dS/dx),   dT/dtheta = -eta dS/dtheta,
/// with the network linearized once and reused for every product.
template <typename Scalar>
class FixedPointJacobian {
public:
    FixedPointJacobian(const DegradProblem<Scalar>& problem, const Image<Scalar>& x_star)
        : p_(problem), lin_(problem.net, problem.theta, x_star) {
        require_same_shape(x_star, problem.measurement, "FixedPointJacobian");
    }

    /// (dT/dx)^T v.
    Image<Scalar> vjp(const Image<Scalar>& v) const {
        ++op_counters().t_vjp_x;
        return combine(v, lin_.vjp_input(v));
    }

    /// (dT/dx) u.
    Image<Scalar> jvp(const Image<Scalar>& u) const {
        ++op_counters().t_jvp_x;
        return combine(u, lin_.jvp(u));
    }

    /// w^T dT/dtheta.
    ParamVector<Scalar> param_vjp(const Image<Scalar>& w) const {
        ParamVector<Scalar> g = lin_.vjp_params(w);
        g.data *= -p_.eta;
        return g;
    }

private:
    // u - eta (2 A^T A u + net_term); A^T A is self-adjoint so both directions
    // share it.
    Image<Scalar> combine(const Image<Scalar>& u, const Image<Scalar>& net_term) const {
        require_same_shape(u, p_.measurement, "fixed-point jacobian");
        Image<Scalar> out = p_.blur.normal(u);
        out.vec() = u.vec() - p_.eta * (Scalar(2) * out.vec() + net_term.vec());
        return out;
    }

    const DegradProblem<Scalar>& p_;
    Linearization<Scalar> lin_;
};

template <typename Scalar>
Image<Scalar> t_vjp_x(const DegradProblem<Scalar>& p, const Image<Scalar>& x_star, const Image<Scalar>& v) {
    return FixedPointJacobian<Scalar>(p, x_star).vjp(v);
}

template <typename Scalar>
Image<Scalar> t_jvp_x(const DegradProblem<Scalar>& p, const Image<Scalar>& x_star, const Image<Scalar>& u) {
    return FixedPointJacobian<Scalar>(p, x_star).jvp(u);
}

namespace detail {

template <typename Scalar>
void require_converged(const FixedPointResult<Image<Scalar>>& fp) {
    if (!fp.converged) throw PreconditionError("gradient requested at a non-converged fixed point");
}

} // namespace detail

/// Jacobian-free direction: the implicit gradient with (I - dT/dx)^{-1}
/// replaced by the identity, i.e. one parameter VJP at x*.
template <typename Scalar>
GradResult<Scalar> jfb_grad(const DegradProblem<Scalar>& p, const FixedPointResult<Image<Scalar>>& fp,
                            const Image<Scalar>& x_true) {
    detail::require_converged(fp);
    GradResult<Scalar> out;
    out.scheme = GradScheme::jfb();
    out.adjoint = loss_grad_at_fixed_point(fp.x_star, x_true);
    out.grad = FixedPointJacobian<Scalar>(p, fp.x_star).param_vjp(out.adjoint);
    return out;
}

/// Truncated Neumann series: w = sum_{j=0..k} g (dT/dx)^j, then w dT/dtheta.
template <typename Scalar>
GradResult<Scalar> neumann_k_grad(const DegradProblem<Scalar>& p, const FixedPointResult<Image<Scalar>>& fp,
                                  const Image<Scalar>& x_true, int k) {
    if (k < 0) throw std::invalid_argument("neumann_k must be nonnegative");
    detail::require_converged(fp);
    GradResult<Scalar> out;
    out.scheme = GradScheme::neumann(k);
    const Image<Scalar> g = loss_grad_at_fixed_point(fp.x_star, x_true);
    const FixedPointJacobian<Scalar> jac(p, fp.x_star);
    Image<Scalar> term = g;
    out.adjoint = g;
    for (int j = 1; j <= k; ++j) {
        term = jac.vjp(term);
        out.adjoint.vec() += term.vec();
    }
    out.grad = jac.param_vjp(out.adjoint);
    return out;
}

/// Exact implicit gradient. The adjoint w with w J = g, J = I - dT/dx*, is
/// obtained from the normal equations (J J^T) w = J g by matrix-free CG.
template <typename Scalar>
GradResult<Scalar> jacobian_cg_grad(const DegradProblem<Scalar>& p, const FixedPointResult<Image<Scalar>>& fp,
                                    const Image<Scalar>& x_true, const GradScheme& cfg) {
    cfg.validate();
    if (cfg.kind != GradKind::jacobian_cg) throw std::invalid_argument("jacobian_cg_grad needs a jacobian_cg scheme");
    detail::require_converged(fp);
    const FixedPointJacobian<Scalar> jac(p, fp.x_star);
    const Image<Scalar> g = loss_grad_at_fixed_point(fp.x_star, x_true);

    auto apply_j = [&](const Image<Scalar>& u) {
        Image<Scalar> out = jac.jvp(u);
        out.vec() = u.vec() - out.vec();
        return out;
    };
    auto apply_jt = [&](const Image<Scalar>& v) {
        Image<Scalar> out = jac.vjp(v);
        out.vec() = v.vec() - out.vec();
        return out;
    };
    auto normal_op = [&](const VectorX<Scalar>& w) { return apply_j(apply_jt(g.with_data(w))).vec(); };

    VectorX<Scalar> w;
    const CgResult cg = conjugate_gradient<Scalar>(normal_op, apply_j(g).vec(), w, cfg.cg_tol, cfg.cg_max_iters);
    if (!cg.converged) throw CgNotConvergedError(cg.relative_residual, cg.iters);

    GradResult<Scalar> out;
    out.scheme = cfg;
    out.adjoint = g.with_data(std::move(w));
    out.grad = jac.param_vjp(out.adjoint);
    out.cg_iters = cg.iters;
    out.residual = cg.relative_residual;
    return out;
}

template <typename Scalar>
GradResult<Scalar> compute_gradient(const DegradProblem<Scalar>& p, const FixedPointResult<Image<Scalar>>& fp,
                                    const Image<Scalar>& x_true, const GradScheme& scheme) {
    scheme.validate();
    switch (scheme.kind) {
    case GradKind::jfb: return jfb_grad(p, fp, x_true);
    case GradKind::jacobian_cg: return jacobian_cg_grad(p, fp, x_true, scheme);
    case GradKind::neumann: return neumann_k_grad(p, fp, x_true, scheme.neumann_k);
    }
    throw std::invalid_argument("unknown gradient scheme");
}

} // namespace degrad
