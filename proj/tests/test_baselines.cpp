#include "degrad/baselines.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace degrad;
using testing::random_image;

namespace {

Eigen::MatrixXcd padded_spectrum(const Eigen::MatrixXd& w, int h, int wd) {
    const int r = int(w.rows()) / 2;
    Eigen::MatrixXd p = Eigen::MatrixXd::Zero(h, wd);
    for (int a = 0; a < w.rows(); ++a)
        for (int b = 0; b < w.cols(); ++b) p((a - r + h) % h, (b - r + wd) % wd) = w(a, b);
    return testing::direct_dft(p);
}

// Inverse DFT by direct summation, real part.
Eigen::MatrixXd direct_idft_real(const Eigen::MatrixXcd& X) {
    const int h = int(X.rows()), w = int(X.cols());
    Eigen::MatrixXd out(h, w);
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            std::complex<double> acc = 0;
            for (int u = 0; u < h; ++u)
                for (int v = 0; v < w; ++v) acc += X(u, v) * std::polar(1.0, two_pi * (double(u) * i / h + double(v) * j / w));
            out(i, j) = acc.real() / (h * w);
        }
    return out;
}

ImageTensor smooth_image(int size) {
    ImageTensor x(1, size, size);
    for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j)
            x(0, i, j) = 0.5 + 0.3 * std::sin(2 * 3.14159265358979323846 * i / size) * std::cos(2 * 3.14159265358979323846 * 2 * j / size) +
                         (i > size / 3 && i < 2 * size / 3 && j > size / 4 && j < 3 * size / 4 ? 0.2 : 0.0);
    return x;
}

} // namespace

TEST_CASE("direct inverse undoes the blur") {
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor x = random_image(2, 16, 16, 1);
    const ImageTensor back = direct_inverse(A, A.apply(x));
    CHECK(testing::relative_error(back.vec(), x.vec()) < 1e-9);
}

TEST_CASE("direct inverse reports vanishing frequencies") {
    // The 3x3 box kernel vanishes at u or v in {2, 4} on a 6x6 grid.
    const BlurOperator<double> box{Kernel<double>(Eigen::MatrixXd::Constant(3, 3, 1.0 / 9.0))};
    try {
        direct_inverse(box, random_image(1, 6, 6, 2));
        FAIL("expected IllConditionedError");
    } catch (const IllConditionedError& e) {
        CHECK(e.frequencies().size() == 20);
        for (const auto& [u, v] : e.frequencies()) CHECK((u == 2 || u == 4 || v == 2 || v == 4));
    }
}

TEST_CASE("blur norm") {
    const GaussianBlur A(make_gaussian_kernel<double>());
    CHECK(blur_norm(A, 16, 16) == doctest::Approx(1.0).epsilon(1e-14));
    const BlurOperator<double> half(A.kernel().scaled(0.5));
    CHECK(blur_norm(half, 16, 16) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("tikhonov descent converges to the Fourier-domain ridge solution") {
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor d = random_image(1, 12, 12, 3, 0, 1);
    BaselineConfig cfg;
    cfg.lambda = 0.1;
    cfg.steps = 600;
    const ImageTensor x = tikhonov_gd(A, d, cfg);

    const Eigen::MatrixXcd k = padded_spectrum(A.kernel().weights(), 12, 12);
    const Eigen::MatrixXcd dh = testing::direct_dft(d.plane(0));
    const Eigen::MatrixXcd xh =
        (k.conjugate().array() * dh.array()) / (k.cwiseAbs2().array() + cfg.lambda).cast<std::complex<double>>();
    const Eigen::MatrixXd expected = direct_idft_real(xh);
    CHECK((x.plane(0) - expected).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("tikhonov descent is linear in the measurement") {
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor d1 = random_image(1, 10, 10, 4), d2 = random_image(1, 10, 10, 5);
    BaselineConfig cfg;
    cfg.steps = 30;
    const ImageTensor sum = tikhonov_gd(A, d1.with_data(d1.vec() + 2 * d2.vec()), cfg);
    const Eigen::VectorXd expected = tikhonov_gd(A, d1, cfg).vec() + 2 * tikhonov_gd(A, d2, cfg).vec();
    CHECK((sum.vec() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("step size guard") {
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor d = random_image(1, 10, 10, 6);
    BaselineConfig cfg;
    cfg.lambda = 0.0;
    cfg.step_size = 2.0;
    CHECK_THROWS_AS(tikhonov_gd(A, d, cfg), StepSizeError);
    CHECK_THROWS_AS(plain_gd_early_stop(A, d, 5, 2.0), StepSizeError);
    cfg.step_size = 1.9;
    CHECK_NOTHROW(tikhonov_gd(A, d, cfg));
    cfg.lambda = 0.1;
    cfg.step_size = 1.9;
    CHECK_THROWS_AS(tikhonov_gd(A, d, cfg), StepSizeError);
    cfg = {};
    cfg.lambda = 1e-2;
    cfg.tv_smoothing = 1e-3;
    CHECK_THROWS_AS(tv_gd(A, d, cfg), StepSizeError);
}

TEST_CASE("smoothed total variation") {
    const ImageTensor flat = ImageTensor::constant(2, 7, 9, 0.3);
    Eigen::VectorXd grad;
    CHECK(detail::smoothed_tv(flat, 0.01, &grad) == doctest::Approx(2 * 63 * 0.01).epsilon(1e-14));
    CHECK(grad.isZero(0.0));

    // A single step edge: each of the h rows crosses the edge twice (circularly).
    ImageTensor step(1, 6, 8);
    for (int i = 0; i < 6; ++i)
        for (int j = 4; j < 8; ++j) step(0, i, j) = 1.0;
    CHECK(detail::smoothed_tv(step, 1e-12, nullptr) == doctest::Approx(12.0).epsilon(1e-9));

    const ImageTensor x = random_image(2, 6, 7, 7), v = random_image(2, 6, 7, 8);
    detail::smoothed_tv(x, 0.05, &grad);
    auto f = [&](const Eigen::VectorXd& z) { return detail::smoothed_tv(x.with_data(z), 0.05, nullptr); };
    const double fd = testing::central_difference(f, x.vec(), v.vec(), 1e-6);
    CHECK(std::abs(fd - grad.dot(v.vec())) < 1e-7 * std::abs(fd));
}

TEST_CASE("tv descent lowers its objective and stops early") {
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor truth = smooth_image(16);
    ImageTensor d = A.apply(truth);
    d.vec() += 0.02 * random_image(1, 16, 16, 9).vec();
    BaselineConfig cfg;
    cfg.lambda = 1e-3;
    cfg.tv_smoothing = 1e-2;
    cfg.step_size = 1.0 / (1.0 + 8 * cfg.lambda / cfg.tv_smoothing);
    cfg.steps = 5000;
    std::vector<double> trace;
    const ImageTensor x = tv_gd(A, d, cfg, &trace);
    for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1] + 1e-15);
    CHECK(trace.size() < 5001);
    CHECK(trace.back() < trace.front());
    CHECK(tv_objective(A, d, x, cfg.lambda, cfg.tv_smoothing) == doctest::Approx(trace.back()).epsilon(1e-14));
}

TEST_CASE("tv descent without regularization is plain descent") {
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor d = random_image(1, 10, 10, 10, 0, 1);
    BaselineConfig cfg;
    cfg.lambda = 0.0;
    cfg.steps = 40;
    cfg.early_stop_patience = 1000;
    const ImageTensor a = tv_gd(A, d, cfg);
    const ImageTensor b = plain_gd_early_stop(A, d, 40);
    CHECK(a.vec() == b.vec());
    CHECK(plain_gd_early_stop(A, d, 0).vec() == d.vec());
}

TEST_CASE("plain descent semiconverges on noisy data") {
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor truth = smooth_image(16);
    ImageTensor d = A.apply(truth);
    d.vec() += 0.01 * random_image(1, 16, 16, 11).vec();
    std::vector<double> errors;
    const std::vector<int> steps = {0, 10, 100, 1000, 10000, 100000};
    for (int k : steps) errors.push_back((plain_gd_early_stop(A, d, k).vec() - truth.vec()).norm());
    const auto best = std::min_element(errors.begin(), errors.end()) - errors.begin();
    CHECK(best > 0);
    CHECK(best < long(errors.size()) - 1);
    // Run long enough and descent approaches the noise-amplifying direct inverse.
    const double inverse_error = (direct_inverse(A, d).vec() - truth.vec()).norm();
    CHECK(inverse_error > errors[best]);
}

TEST_CASE("baseline config validation") {
    BaselineConfig cfg;
    cfg.lambda = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.tv_smoothing = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.step_size = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_THROWS_AS(plain_gd_early_stop(GaussianBlur(make_gaussian_kernel<double>()), random_image(1, 8, 8, 1), -1),
                    std::invalid_argument);
}
