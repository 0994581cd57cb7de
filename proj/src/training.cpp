#include "degrad/training.hpp"

#include <chrono>
#include <cstdlib>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>

namespace degrad {

namespace {

constexpr std::uint64_t pretrain_stream = 0x70726574ULL;
constexpr std::uint64_t epoch_stream = 0x65706f63ULL;

std::vector<ImageTensor> gather(const SampleSet& set, const std::vector<int>& idx, bool truth) {
    std::vector<ImageTensor> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(truth ? set[i].truth : set[i].measurement);
    return out;
}

} // namespace

int thread_count() {
    const char* env = std::getenv("DEGRAD_THREADS");
    if (!env || !*env) return 1;
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (*end != '\0' || n < 1)
        throw std::invalid_argument(std::string("DEGRAD_THREADS must be a positive integer, got '") + env + "'");
    return int(std::min<long>(n, 256));
}

Model make_model(const RunConfig& cfg) {
    Network<double> net(cfg.net);
    ParamVector<double> theta = normalize_spectral(net, net.init_params(), cfg.init_power_iters);
    return {std::move(net), std::move(theta)};
}

PretrainReport pretrain(Model& model, const SampleSet& train, const RunConfig& cfg) {
    cfg.validate();
    if (train.empty()) throw std::invalid_argument("pretraining needs training images");
    PretrainReport report;
    std::mt19937_64 rng(derive_seed(cfg.seed, pretrain_stream));
    std::uniform_int_distribution<int> pick(0, int(train.size()) - 1);
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    OptimizerState<double> opt(cfg.optimizer, cfg.pretrain_learning_rate);
    const int threads = thread_count();
    for (int step = 0; step < cfg.pretrain_steps; ++step) {
        // Draw the whole batch up front so the random stream is independent of
        // the thread count.
        std::vector<ImageTensor> noisy, target;
        for (int b = 0; b < cfg.batch_size; ++b) {
            const ImageTensor& x = train[pick(rng)].truth;
            ImageTensor e = ImageTensor::zeros_like(x);
            for (Eigen::Index i = 0; i < e.size(); ++i) e.vec()[i] = noise(rng);
            ImageTensor xn = x;
            xn.vec() += e.vec();
            noisy.push_back(std::move(xn));
            target.push_back(std::move(e));
        }
        update_normalization_stats(model.net, model.theta, noisy);
        std::vector<VectorX<double>> grads(noisy.size());
        std::vector<double> losses(noisy.size());
        parallel_for(int(noisy.size()), threads, [&](int b) {
            const Linearization<double> lin(model.net, model.theta, noisy[b]);
            ImageTensor r = lin.output();
            r.vec() -= target[b].vec();
            losses[b] = r.vec().squaredNorm() / double(r.size());
            r.vec() *= 2.0 / double(r.size());
            grads[b] = lin.vjp_params(r).data;
        });
        VectorX<double> grad = VectorX<double>::Zero(model.theta.size());
        for (const VectorX<double>& g : grads) grad += g;
        grad /= double(grads.size());
        report.losses.push_back(std::accumulate(losses.begin(), losses.end(), 0.0) / double(losses.size()));
        opt.step(model.theta, grad);
        model.theta = normalize_spectral(model.net, model.theta, 1);
    }
    return report;
}

FixedPointResult<ImageTensor> reconstruct(const Model& model, const GaussianBlur& A, const ImageTensor& measurement,
                                          const RunConfig& cfg) {
    const DegradProblem<double> problem{model.net, model.theta, A, measurement, cfg.eta};
    return solve_anderson(problem, measurement, cfg.solver);
}

ReconstructionSummary reconstruction_mse(const Model& model, const GaussianBlur& A, const SampleSet& set,
                                         const RunConfig& cfg) {
    ReconstructionSummary out;
    const int n = int(set.size());
    std::vector<double> errors(n, 0.0);
    std::vector<int> iters(n, 0), status(n, 0);
    parallel_for(n, thread_count(), [&](int i) {
        try {
            const FixedPointResult<ImageTensor> fp = reconstruct(model, A, set[i].measurement, cfg);
            errors[i] = double(mse_loss(fp.x_star, set[i].truth));
            iters[i] = fp.iters;
            status[i] = fp.converged ? 0 : 1;
        } catch (const NonContractionError&) {
            status[i] = 2;
        }
    });
    double sum = 0;
    int used = 0;
    for (int i = 0; i < n; ++i) {
        if (status[i] == 2) {
            ++out.diverged;
            continue;
        }
        out.not_converged += status[i];
        sum += errors[i];
        out.mean_iters += iters[i];
        ++used;
    }
    if (used > 0) {
        out.mse = sum / used;
        out.mean_iters /= used;
    }
    return out;
}

TrainReport train(Model& model, const SampleSet& train_set, const SampleSet& val_set, const RunConfig& cfg,
                  std::ostream* epoch_csv) {
    cfg.validate();
    if (train_set.empty()) throw std::invalid_argument("training needs a nonempty train split");
    const GaussianBlur A = make_blur(cfg);
    const int threads = thread_count();
    TrainReport report;
    report.initial_train_mse = reconstruction_mse(model, A, train_set, cfg).mse;
    if (epoch_csv) {
        *epoch_csv << epoch_csv_header << '\n';
        epoch_csv->precision(17);
    }

    OptimizerState<double> opt(cfg.optimizer, cfg.learning_rate);
    std::mt19937_64 rng(derive_seed(cfg.seed, epoch_stream));
    std::vector<int> order(train_set.size());
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        EpochStats stats;
        stats.epoch = epoch;
        double loss_sum = 0;
        int used = 0, solves = 0;
        long fp_iters = 0, cg_iters = 0;
        for (std::size_t b = 0; b < order.size(); b += std::size_t(cfg.batch_size)) {
            const std::vector<int> idx(order.begin() + long(b),
                                       order.begin() + long(std::min(order.size(), b + std::size_t(cfg.batch_size))));
            const BatchGradient<double> g =
                parameter_update(model.net, model.theta, opt, A, gather(train_set, idx, false),
                                 gather(train_set, idx, true), cfg.eta, cfg.solver, cfg.scheme, cfg.cg_fallback,
                                 threads);
            loss_sum += g.loss_sum;
            used += g.used;
            solves += int(idx.size());
            stats.skipped += g.skipped;
            stats.fallbacks += g.fallbacks;
            fp_iters += g.fp_iters;
            cg_iters += g.cg_iters;
        }
        stats.train_loss = used > 0 ? loss_sum / used : 0.0;
        stats.val_loss = val_set.empty() ? 0.0 : reconstruction_mse(model, A, val_set, cfg).mse;
        stats.mean_fp_iters = solves > 0 ? double(fp_iters) / solves : 0.0;
        stats.mean_cg_iters = solves > 0 ? double(cg_iters) / solves : 0.0;
        stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (epoch_csv) {
            *epoch_csv << stats.epoch << ',' << stats.train_loss << ',' << stats.val_loss << ',' << stats.skipped << ','
                       << stats.fallbacks << ',' << stats.mean_fp_iters << ',' << stats.mean_cg_iters << ','
                       << stats.seconds << '\n';
            epoch_csv->flush();
        }
        report.epochs.push_back(stats);
    }
    report.final_train_mse = reconstruction_mse(model, A, train_set, cfg).mse;
    return report;
}

} // namespace degrad
