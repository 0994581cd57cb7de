#include "degrad/bench.hpp"

#include "degrad/dataset.hpp"
#include "degrad/training.hpp"

#include <chrono>
#include <cmath>
#include <new>
#include <ostream>

namespace degrad {

namespace {

constexpr std::uint64_t bench_stream = 0x62656e63ULL;

struct Timing {
    std::vector<double> seconds;
    long fp_iters = 0;
    long cg_iters = 0;
    int solves = 0;
};

template <typename Scalar>
Timing time_scheme(const RunConfig& cfg, const Network<Scalar>& net0, const ParamVector<Scalar>& theta0,
                   const BlurOperator<Scalar>& A, const std::vector<Image<Scalar>>& measurements,
                   const std::vector<Image<Scalar>>& truths, const GradScheme& scheme) {
    Timing t;
    for (int rep = 0; rep < cfg.bench_warmup + cfg.bench_reps; ++rep) {
        Network<Scalar> net = net0;
        ParamVector<Scalar> theta = theta0;
        OptimizerState<Scalar> opt(cfg.optimizer, cfg.learning_rate);
        const auto start = std::chrono::steady_clock::now();
        const BatchGradient<Scalar> g = parameter_update(net, theta, opt, A, measurements, truths, Scalar(cfg.eta),
                                                         cfg.solver, scheme, cfg.cg_fallback, 1);
        const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (rep < cfg.bench_warmup) continue;
        t.seconds.push_back(s);
        t.fp_iters += g.fp_iters;
        t.cg_iters += g.cg_iters;
        t.solves += int(measurements.size());
    }
    return t;
}

template <typename Scalar>
std::vector<BenchRow> bench_size(const RunConfig& cfg, int size) {
    RunConfig local = cfg;
    local.image_size = size;
    const GaussianBlur A64 = make_blur(local);
    const BlurOperator<Scalar> A(Kernel<Scalar>(A64.kernel().weights().template cast<Scalar>()));
    std::vector<Image<Scalar>> measurements, truths;
    for (int b = 0; b < cfg.bench_batch; ++b) {
        const std::uint64_t seed = derive_seed(cfg.seed, bench_stream + std::uint64_t(size) * 1000 + b);
        const ImageTensor x = preprocess(synthetic_shapes(size, cfg.channels, seed), size);
        truths.push_back(x.cast<Scalar>());
        measurements.push_back(make_measurement(A64, x, cfg.noise_sigma, derive_seed(seed, 1)).cast<Scalar>());
    }
    const Model model = make_model(cfg);
    Network<Scalar> net(cfg.net);
    ParamVector<Scalar> theta = net.zero_params();
    theta.data = model.theta.data.template cast<Scalar>();
    for (std::size_t l = 0; l < net.convs().size(); ++l) {
        net.right_vectors()[l] = model.net.right_vectors()[l].template cast<Scalar>();
        net.left_vectors()[l] = model.net.left_vectors()[l].template cast<Scalar>();
        net.sigmas()[l] = Scalar(model.net.sigmas()[l]);
    }

    std::vector<BenchRow> rows;
    const GradScheme jfb = GradScheme::jfb();
    GradScheme cg = cfg.scheme.kind == GradKind::jacobian_cg ? cfg.scheme : GradScheme::jacobian_cg();
    cg.kind = GradKind::jacobian_cg;
    for (const GradScheme& scheme : {jfb, cg}) {
        BenchRow row;
        row.size = size;
        row.scheme = to_string(scheme.kind);
        try {
            const Timing t = time_scheme(cfg, net, theta, A, measurements, truths, scheme);
            double sum = 0, sq = 0;
            for (double s : t.seconds) sum += s;
            row.reps = int(t.seconds.size());
            row.mean_seconds = sum / row.reps;
            for (double s : t.seconds) sq += (s - row.mean_seconds) * (s - row.mean_seconds);
            row.std_seconds = row.reps > 1 ? std::sqrt(sq / (row.reps - 1)) : 0.0;
            row.mean_fp_iters = double(t.fp_iters) / t.solves;
            row.mean_cg_iters = double(t.cg_iters) / t.solves;
        } catch (const std::bad_alloc&) {
            row.available = false;
        }
        rows.push_back(row);
    }
    return rows;
}

} // namespace

std::vector<BenchRow> run_bench(const RunConfig& cfg, std::ostream* log) {
    cfg.validate();
    std::vector<BenchRow> rows;
    for (int size : cfg.bench_sizes) {
        const std::vector<BenchRow> cell =
            cfg.bench_single_precision ? bench_size<float>(cfg, size) : bench_size<double>(cfg, size);
        for (const BenchRow& r : cell) {
            if (log) {
                *log << "size " << r.size << ' ' << r.scheme << ": ";
                if (r.available)
                    *log << r.mean_seconds << " s (std " << r.std_seconds << ", fp iters " << r.mean_fp_iters
                         << ", cg iters " << r.mean_cg_iters << ")\n";
                else
                    *log << "unavailable\n";
            }
            rows.push_back(r);
        }
    }
    return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
    out << bench_csv_header << '\n';
    out.precision(10);
    for (const BenchRow& r : rows)
        out << r.size << ',' << r.scheme << ',' << r.mean_seconds << ',' << r.std_seconds << ','
            << (r.available ? "true" : "false") << ',' << r.reps << ',' << r.mean_fp_iters << ',' << r.mean_cg_iters
            << '\n';
}

} // namespace degrad
