#include "degrad/evaluation.hpp"

#include "degrad/baselines.hpp"
#include "degrad/io.hpp"
#include "degrad/training.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <ostream>

namespace fs = std::filesystem;

namespace degrad {

namespace {

// At most this many validation images drive the tuning.
constexpr std::size_t tuning_images = 4;

BaselineConfig with_lambda(const RunConfig& cfg, double lambda) {
    BaselineConfig b = cfg.baseline;
    b.lambda = lambda;
    return b;
}

ImageTensor tv_reconstruction(const GaussianBlur& A, const ImageTensor& d, double lambda, const RunConfig& cfg) {
    BaselineConfig b = with_lambda(cfg, lambda);
    b.step_size = tv_step_size(A, d.height(), d.width(), lambda, cfg);
    return tv_gd(A, d, b);
}

ImageTensor side_by_side(const std::vector<const ImageTensor*>& images) {
    const ImageTensor& first = *images.front();
    ImageTensor strip(first.channels(), first.height(), first.width() * int(images.size()));
    for (std::size_t k = 0; k < images.size(); ++k)
        for (int c = 0; c < first.channels(); ++c)
            strip.plane(c).middleCols(Eigen::Index(k) * first.width(), first.width()) = images[k]->plane(c);
    return strip;
}

std::string padded(int i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 4 ? 4 - s.size() : 0, '0') + s;
}

} // namespace

double tv_step_size(const GaussianBlur& A, int height, int width, double lambda, const RunConfig& cfg) {
    const double norm = blur_norm(A, height, width);
    const double lipschitz = norm * norm + 8.0 * lambda / cfg.baseline.tv_smoothing;
    return std::min(cfg.baseline.step_size, 1.0 / lipschitz);
}

TunedBaselines tune_baselines(const GaussianBlur& A, const SampleSet& tuning, const RunConfig& cfg) {
    TunedBaselines out;
    out.tikhonov_lambda = cfg.baseline.lambda;
    out.tv_lambda = cfg.baseline.lambda;
    if (tuning.empty()) return out;
    const std::size_t n = std::min(tuning.size(), tuning_images);

    double best = std::numeric_limits<double>::infinity();
    for (double lambda : tikhonov_lambda_grid) {
        double err = 0;
        for (std::size_t i = 0; i < n; ++i)
            err += mse(tikhonov_gd(A, tuning[i].measurement, with_lambda(cfg, lambda)), tuning[i].truth);
        if (err < best) {
            best = err;
            out.tikhonov_lambda = lambda;
        }
    }

    best = std::numeric_limits<double>::infinity();
    for (double lambda : tv_lambda_grid) {
        double err = 0;
        for (std::size_t i = 0; i < n; ++i)
            err += mse(tv_reconstruction(A, tuning[i].measurement, lambda, cfg), tuning[i].truth);
        if (err < best) {
            best = err;
            out.tv_lambda = lambda;
        }
    }

    // Error trace of plain gradient descent, one run per image.
    std::vector<double> trace(std::size_t(cfg.gd_max_steps) + 1, 0.0);
    const double step = cfg.baseline.step_size;
    const double norm = blur_norm(A, tuning[0].measurement.height(), tuning[0].measurement.width());
    detail::guard_step(step, norm * norm);
    for (std::size_t i = 0; i < n; ++i) {
        ImageTensor x = tuning[i].measurement;
        trace[0] += mse(x, tuning[i].truth);
        for (int k = 1; k <= cfg.gd_max_steps; ++k) {
            ImageTensor r = A.apply(x);
            r.vec() -= tuning[i].measurement.vec();
            x.vec() -= step * A.adjoint(r).vec();
            trace[std::size_t(k)] += mse(x, tuning[i].truth);
        }
    }
    out.gd_steps = int(std::min_element(trace.begin(), trace.end()) - trace.begin());
    return out;
}

EvalResult evaluate(const Model& model, const GaussianBlur& A, const SampleSet& test_set, const TunedBaselines& tuned,
                    const RunConfig& cfg, const std::string& output_dir) {
    if (test_set.empty()) throw std::invalid_argument("evaluation needs a nonempty test split");
    if (!output_dir.empty()) fs::create_directories(output_dir);
    EvalResult result;
    result.tuned = tuned;
    const std::size_t m = eval_methods.size();
    std::vector<std::vector<EvalRow>> per_image(test_set.size());
    std::vector<int> diverged(test_set.size(), 0);

    parallel_for(int(test_set.size()), thread_count(), [&](int i) {
        const Sample& s = test_set[std::size_t(i)];
        ImageTensor inverse;
        try {
            inverse = direct_inverse(A, s.measurement);
        } catch (const IllConditionedError&) {
            inverse = ImageTensor::constant(s.truth.channels(), s.truth.height(), s.truth.width(),
                                            std::numeric_limits<double>::quiet_NaN());
        }
        const ImageTensor gd = plain_gd_early_stop(A, s.measurement, tuned.gd_steps, cfg.baseline.step_size);
        const ImageTensor tik = tikhonov_gd(A, s.measurement, with_lambda(cfg, tuned.tikhonov_lambda));
        const ImageTensor tv = tv_reconstruction(A, s.measurement, tuned.tv_lambda, cfg);
        ImageTensor deq = s.measurement;
        FixedPointResult<ImageTensor> fp;
        try {
            fp = reconstruct(model, A, s.measurement, cfg);
            deq = fp.x_star;
        } catch (const NonContractionError& e) {
            diverged[std::size_t(i)] = 1;
            fp.residuals = e.residuals();
        }
        const ImageTensor* recon[] = {&s.measurement, &inverse, &gd, &tik, &tv, &deq};
        for (std::size_t k = 0; k < m; ++k) per_image[std::size_t(i)].push_back({i, eval_methods[k], measure(*recon[k], s.truth)});
        if (!output_dir.empty()) {
            const std::string stem = (fs::path(output_dir) / padded(i)).string();
            write_image(stem + "_truth.png", s.truth);
            write_image(stem + "_measurement.png", s.measurement);
            write_image(stem + "_direct_inverse.png", inverse);
            write_image(stem + "_gradient_descent.png", gd);
            write_image(stem + "_degrad.png", deq);
            write_image(stem + "_rows.png", side_by_side({&s.truth, &s.measurement, &inverse, &gd, &deq}));
            std::ofstream residuals(stem + "_residuals.csv");
            write_residual_csv(residuals, fp);
        }
    });

    int failures = 0;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
        failures += diverged[i];
        for (EvalRow& r : per_image[i]) result.rows.push_back(std::move(r));
    }
    if (failures > 0)
        std::cerr << "warning: " << failures << " DE-GRAD solves diverged; their rows score the measurement\n";

    for (std::size_t k = 0; k < m; ++k) {
        EvalRow mean{-1, eval_methods[k], {}};
        int count = 0;
        for (const EvalRow& r : result.rows) {
            if (r.method != eval_methods[k]) continue;
            mean.metrics.mse += r.metrics.mse;
            mean.metrics.psnr += r.metrics.psnr;
            mean.metrics.ssim += r.metrics.ssim;
            ++count;
        }
        mean.metrics.mse /= count;
        mean.metrics.psnr /= count;
        mean.metrics.ssim /= count;
        result.means.push_back(mean);
    }
    return result;
}

void write_eval_csv(std::ostream& out, const EvalResult& result) {
    out << eval_csv_header << '\n';
    out.precision(10);
    for (const EvalRow& r : result.rows)
        out << r.image << ',' << r.method << ',' << r.metrics.mse << ',' << r.metrics.psnr << ',' << r.metrics.ssim << '\n';
    for (const EvalRow& r : result.means)
        out << "mean," << r.method << ',' << r.metrics.mse << ',' << r.metrics.psnr << ',' << r.metrics.ssim << '\n';
}

} // namespace degrad
