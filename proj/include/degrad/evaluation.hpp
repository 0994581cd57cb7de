#pragma once

#include "degrad/checkpoint.hpp"
#include "degrad/config.hpp"
#include "degrad/dataset.hpp"
#include "degrad/metrics.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace degrad {

/// Baseline settings picked on held-out (validation) images.
struct TunedBaselines {
    double tikhonov_lambda = 1e-2;
    double tv_lambda = 1e-2;
    int gd_steps = 20;
};

inline const std::vector<double> tikhonov_lambda_grid{1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 1e-1};
inline const std::vector<double> tv_lambda_grid{1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3};

/// Grid search for the Tikhonov and TV weights and an error-trace scan for
/// the plain gradient descent stopping step, minimizing mean MSE over
/// `tuning`. Falls back to cfg defaults when `tuning` is empty.
TunedBaselines tune_baselines(const GaussianBlur& A, const SampleSet& tuning, const RunConfig& cfg);

/// Step size used for the TV baseline: cfg.baseline.step_size capped at
/// 1/L, L = ||A||^2 + 8 lambda / beta, the objective's gradient Lipschitz bound.
double tv_step_size(const GaussianBlur& A, int height, int width, double lambda, const RunConfig& cfg);

/// Reconstruction methods in report order.
inline const std::vector<std::string> eval_methods{"measurement",   "direct_inverse",  "gradient_descent",
                                                   "tikhonov",      "total_variation", "degrad"};

struct EvalRow {
    int image = 0;
    std::string method;
    MetricReport metrics;
};

struct EvalResult {
    TunedBaselines tuned;
    std::vector<EvalRow> rows;
    /// Mean metrics per method, in eval_methods order.
    std::vector<EvalRow> means;
};

/// Scores every method on every test image. With a nonempty `output_dir`,
/// also writes per image the ground truth, measurement, direct inverse,
/// early-stopped gradient descent and DE-GRAD reconstruction as PNG files,
/// a strip of all five side by side, and the DE-GRAD residual history as
/// CSV (iter,residual).
EvalResult evaluate(const Model& model, const GaussianBlur& A, const SampleSet& test_set, const TunedBaselines& tuned,
                    const RunConfig& cfg, const std::string& output_dir = "");

inline constexpr const char* eval_csv_header = "image,method,mse,psnr,ssim";

/// Per-image rows followed by rows with image = "mean".
void write_eval_csv(std::ostream& out, const EvalResult& result);

} // namespace degrad
