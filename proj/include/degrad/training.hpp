#pragma once

#include "degrad/backprop.hpp"
#include "degrad/checkpoint.hpp"
#include "degrad/config.hpp"
#include "degrad/dataset.hpp"
#include "degrad/fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iosfwd>
#include <thread>
#include <vector>

namespace degrad {

/// Worker threads for per-sample work, from DEGRAD_THREADS (default 1).
int thread_count();

/// Runs body(i) for i in [0, n) on up to `threads` threads. Each index runs
/// exactly once; results must be written to per-index slots.
template <typename Body>
void parallel_for(int n, int threads, const Body& body) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
        pool.emplace_back([&, t] {
            try {
                for (int i = t; i < n; i += threads) body(i);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    for (std::thread& th : pool) th.join();
    for (const std::exception_ptr& e : errors)
        if (e) std::rethrow_exception(e);
}

/// Plain gradient step or Adam (beta1 0.9, beta2 0.999, epsilon 1e-8).
template <typename Scalar>
class OptimizerState {
public:
    OptimizerState(Optimizer kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

    void step(ParamVector<Scalar>& theta, const VectorX<Scalar>& grad) {
        if (kind_ == Optimizer::sgd) {
            theta.data -= Scalar(lr_) * grad;
            return;
        }
        if (m_.size() == 0) {
            m_ = VectorX<Scalar>::Zero(grad.size());
            v_ = VectorX<Scalar>::Zero(grad.size());
        }
        ++t_;
        m_ = Scalar(0.9) * m_ + Scalar(0.1) * grad;
        v_ = Scalar(0.999) * v_ + Scalar(0.001) * grad.cwiseAbs2();
        const Scalar c1 = Scalar(1) - Scalar(std::pow(0.9, t_));
        const Scalar c2 = Scalar(1) - Scalar(std::pow(0.999, t_));
        theta.data.array() -= Scalar(lr_) * (m_.array() / c1) / ((v_.array() / c2).sqrt() + Scalar(1e-8));
    }

private:
    Optimizer kind_;
    double lr_;
    VectorX<Scalar> m_, v_;
    int t_ = 0;
};

/// Outcome of the forward solve and gradient for one training pair.
template <typename Scalar>
struct SampleGradient {
    enum class Status { ok, diverged, not_converged, cg_failed };
    Status status = Status::ok;
    bool fell_back = false;
    VectorX<Scalar> grad;
    Image<Scalar> x_star;
    double loss = 0;
    int fp_iters = 0;
    int cg_iters = 0;
};

template <typename Scalar>
SampleGradient<Scalar> sample_gradient(const Network<Scalar>& net, const ParamVector<Scalar>& theta,
                                       const BlurOperator<Scalar>& A, const Image<Scalar>& measurement,
                                       const Image<Scalar>& truth, Scalar eta, const SolverConfig& solver,
                                       const GradScheme& scheme, bool cg_fallback) {
    using Status = typename SampleGradient<Scalar>::Status;
    SampleGradient<Scalar> out;
    const DegradProblem<Scalar> problem{net, theta, A, measurement, eta};
    FixedPointResult<Image<Scalar>> fp;
    try {
        fp = solve_anderson(problem, measurement, solver);
    } catch (const NonContractionError&) {
        out.status = Status::diverged;
        return out;
    }
    out.fp_iters = fp.iters;
    out.x_star = fp.x_star;
    if (!fp.converged) {
        out.status = Status::not_converged;
        return out;
    }
    out.loss = double(mse_loss(fp.x_star, truth));
    try {
        GradResult<Scalar> g = compute_gradient(problem, fp, truth, scheme);
        out.grad = std::move(g.grad.data);
        out.cg_iters = g.cg_iters;
    } catch (const CgNotConvergedError&) {
        if (!cg_fallback) {
            out.status = Status::cg_failed;
            return out;
        }
        out.grad = std::move(jfb_grad(problem, fp, truth).grad.data);
        out.fell_back = true;
    }
    return out;
}

/// Batch-averaged gradient over the samples that produced one.
template <typename Scalar>
struct BatchGradient {
    VectorX<Scalar> grad;
    int used = 0;
    int skipped = 0;
    int fallbacks = 0;
    double loss_sum = 0;
    long fp_iters = 0;
    long cg_iters = 0;
    std::vector<Image<Scalar>> fixed_points;
};

/// Solves and differentiates every pair in the batch (concurrently when
/// threads > 1) and reduces in index order, so the result does not depend on
/// the thread count.
template <typename Scalar>
BatchGradient<Scalar> batch_gradient(const Network<Scalar>& net, const ParamVector<Scalar>& theta,
                                     const BlurOperator<Scalar>& A, const std::vector<Image<Scalar>>& measurements,
                                     const std::vector<Image<Scalar>>& truths, Scalar eta, const SolverConfig& solver,
                                     const GradScheme& scheme, bool cg_fallback, int threads) {
    const int n = int(measurements.size());
    std::vector<SampleGradient<Scalar>> per(n);
    parallel_for(n, threads, [&](int i) {
        per[i] = sample_gradient(net, theta, A, measurements[i], truths[i], eta, solver, scheme, cg_fallback);
    });
    BatchGradient<Scalar> out;
    out.grad = VectorX<Scalar>::Zero(theta.size());
    for (SampleGradient<Scalar>& s : per) {
        out.fp_iters += s.fp_iters;
        out.cg_iters += s.cg_iters;
        if (s.status != SampleGradient<Scalar>::Status::ok) {
            ++out.skipped;
            continue;
        }
        out.grad += s.grad;
        out.loss_sum += s.loss;
        out.fallbacks += s.fell_back ? 1 : 0;
        ++out.used;
        out.fixed_points.push_back(std::move(s.x_star));
    }
    if (out.used > 0) out.grad /= Scalar(out.used);
    return out;
}

/// One full parameter update: batch gradient, optimizer step, one power
/// iteration of spectral normalization, then a refresh of frozen
/// normalization statistics from the batch fixed points.
template <typename Scalar>
BatchGradient<Scalar> parameter_update(Network<Scalar>& net, ParamVector<Scalar>& theta,
                                       OptimizerState<Scalar>& opt, const BlurOperator<Scalar>& A,
                                       const std::vector<Image<Scalar>>& measurements,
                                       const std::vector<Image<Scalar>>& truths, Scalar eta,
                                       const SolverConfig& solver, const GradScheme& scheme, bool cg_fallback,
                                       int threads) {
    BatchGradient<Scalar> g =
        batch_gradient(net, theta, A, measurements, truths, eta, solver, scheme, cg_fallback, threads);
    if (g.used == 0) return g;
    const VectorX<Scalar> before = theta.data;
    opt.step(theta, g.grad);
    // A step that changed nothing (zero rate) leaves nothing to renormalize.
    if (theta.data == before) return g;
    theta = normalize_spectral(net, theta, 1);
    update_normalization_stats(net, theta, g.fixed_points);
    return g;
}

/// Fresh network from cfg.net with spectrally normalized initial weights.
Model make_model(const RunConfig& cfg);

struct PretrainReport {
    std::vector<double> losses;
};

/// Fits S as a noise predictor, S(x + e) ~ e with fresh e ~ N(0, sigma^2)
/// every step, by mini-batch descent on the mean squared error.
PretrainReport pretrain(Model& model, const SampleSet& train, const RunConfig& cfg);

struct ReconstructionSummary {
    double mse = 0;
    /// Samples whose solve diverged; they are left out of the mean.
    int diverged = 0;
    int not_converged = 0;
    double mean_iters = 0;
};

/// Fixed-point reconstruction x* of one measurement, started at x0 = d.
FixedPointResult<ImageTensor> reconstruct(const Model& model, const GaussianBlur& A, const ImageTensor& measurement,
                                          const RunConfig& cfg);

/// Mean over a set of mse(x*, truth).
ReconstructionSummary reconstruction_mse(const Model& model, const GaussianBlur& A, const SampleSet& set,
                                         const RunConfig& cfg);

struct EpochStats {
    int epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    int skipped = 0;
    int fallbacks = 0;
    double mean_fp_iters = 0;
    double mean_cg_iters = 0;
    double seconds = 0;
};

struct TrainReport {
    double initial_train_mse = 0;
    double final_train_mse = 0;
    std::vector<EpochStats> epochs;
};

inline constexpr const char* epoch_csv_header =
    "epoch,train_loss,val_loss,skipped,fallbacks,mean_fp_iters,mean_cg_iters,seconds";

/// Training loop: per batch, solve each fixed point without
/// derivatives, differentiate with cfg.scheme, average, step. Rows of
/// `epoch_csv` follow epoch_csv_header when it is given.
TrainReport train(Model& model, const SampleSet& train_set, const SampleSet& val_set, const RunConfig& cfg,
                  std::ostream* epoch_csv = nullptr);

} // namespace degrad
