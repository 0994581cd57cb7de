#pragma once

#include "degrad/image.hpp"

#include <cmath>

namespace degrad {

struct CgResult {
    int iters = 0;
    /// ||b - A x|| / ||b|| of the returned x, recomputed from scratch.
    double relative_residual = 0;
    bool converged = false;
};

/// Matrix-free conjugate gradient for a symmetric positive (semi)definite
/// operator, started from x = 0. When the recurrence residual reaches `tol`
/// the true residual is recomputed and the iteration restarts from it if it
/// has drifted above `tol`.
template <typename Scalar, typename Op>
CgResult conjugate_gradient(const Op& op, const VectorX<Scalar>& rhs, VectorX<Scalar>& x, double tol,
                            int max_iters) {
    CgResult out;
    x = VectorX<Scalar>::Zero(rhs.size());
    const Scalar rhs_norm = rhs.norm();
    if (rhs_norm == Scalar(0)) {
        out.converged = true;
        return out;
    }
    const Scalar target = Scalar(tol) * rhs_norm;
    VectorX<Scalar> r = rhs;
    VectorX<Scalar> p = r;
    Scalar rho = r.squaredNorm();
    bool r_is_true = true;
    while (out.iters < max_iters) {
        const VectorX<Scalar> q = op(p);
        const Scalar pq = p.dot(q);
        if (!(pq > Scalar(0))) break;
        const Scalar alpha = rho / pq;
        x += alpha * p;
        r -= alpha * q;
        r_is_true = false;
        ++out.iters;
        const Scalar rho_next = r.squaredNorm();
        if (std::sqrt(rho_next) <= target) {
            r = rhs - op(x);
            r_is_true = true;
            rho = r.squaredNorm();
            if (std::sqrt(rho) <= target) break;
            p = r;
            continue;
        }
        p = r + (rho_next / rho) * p;
        rho = rho_next;
    }
    if (!r_is_true) r = rhs - op(x);
    out.relative_residual = double(r.norm() / rhs_norm);
    out.converged = out.relative_residual <= tol;
    return out;
}

} // namespace degrad
