#include "degrad/fixed_point.hpp"

#include "support.hpp"

#include <doctest.h>

#include <limits>
#include <sstream>

using namespace degrad;
using testing::random_image;

namespace {

struct Affine {
    Eigen::MatrixXd M;
    Eigen::VectorXd b;
    Eigen::VectorXd operator()(const Eigen::VectorXd& x) const { return M * x + b; }
    Eigen::VectorXd solution() const {
        return (Eigen::MatrixXd::Identity(M.rows(), M.cols()) - M).partialPivLu().solve(b);
    }
};

// Random symmetric contraction whose spectrum spans [-0.3, rho].
Affine random_affine(int n, double rho, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Eigen::MatrixXd R(n, n);
    for (Eigen::Index i = 0; i < R.size(); ++i) R.data()[i] = normal(rng);
    const Eigen::MatrixXd Q = Eigen::HouseholderQR<Eigen::MatrixXd>(R).householderQ();
    Eigen::VectorXd eig = Eigen::VectorXd::LinSpaced(n, -0.3, rho);
    Affine a{Q * eig.asDiagonal() * Q.transpose(), Eigen::VectorXd(n)};
    for (int i = 0; i < n; ++i) a.b[i] = normal(rng);
    return a;
}

NetConfig identity_net(int channels) {
    NetConfig cfg;
    cfg.n_layers = 4;
    cfg.image_channels = channels;
    cfg.hidden_channels = 2 * channels;
    cfg.init = Init::identity_path;
    cfg.identity_gain = 0.0;
    return cfg;
}

} // namespace

TEST_CASE("picard on a 0.5-contraction halves the residual each step") {
    const Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(10, -1, 1);
    auto map = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd { return 0.5 * x + b; };
    SolverConfig cfg;
    cfg.tol = 1e-9;
    const auto r = solve_picard<double>(map, Eigen::VectorXd::Zero(10), cfg);
    REQUIRE(r.converged);
    for (std::size_t k = 1; k < r.residuals.size(); ++k)
        CHECK(r.residuals[k] / r.residuals[k - 1] == doctest::Approx(0.5).epsilon(1e-5));
    const double r0 = r.residuals.front();
    CHECK(r.iters == int(std::ceil(std::log(cfg.tol / r0) / std::log(0.5))));
    CHECK((r.x_star - 2.0 * b).cwiseAbs().maxCoeff() < 2 * cfg.tol * std::sqrt(10.0));
}

TEST_CASE("both solvers reach the dense solution of an affine contraction") {
    const Affine a = random_affine(30, 0.95, 3);
    SolverConfig cfg;
    cfg.tol = 1e-10;
    cfg.max_iters = 2000;
    const auto p = solve_picard<double>(a, Eigen::VectorXd::Zero(30), cfg);
    const auto q = solve_anderson<double>(a, Eigen::VectorXd::Zero(30), cfg);
    REQUIRE(p.converged);
    REQUIRE(q.converged);
    const Eigen::VectorXd exact = a.solution();
    // ||x - x*|| <= ||T(x) - x|| / (1 - rho)
    CHECK((p.x_star - exact).norm() <= cfg.tol * std::sqrt(30.0) / 0.05 * 1.01);
    CHECK((q.x_star - exact).norm() <= cfg.tol * std::sqrt(30.0) / 0.05 * 1.01);
    CHECK(q.iters < p.iters / 3);
    CHECK(q.fallback_steps == 0);
}

TEST_CASE("anderson with memory 1 and full mixing is picard") {
    const Affine a = random_affine(12, 0.8, 4);
    SolverConfig cfg;
    cfg.anderson_memory = 1;
    cfg.tol = 1e-8;
    const Eigen::VectorXd x0 = Eigen::VectorXd::Ones(12);
    const auto p = solve_picard<double>(a, x0, cfg);
    const auto q = solve_anderson<double>(a, x0, cfg);
    CHECK(p.residuals == q.residuals);
    CHECK(p.x_star == q.x_star);
}

TEST_CASE("zero iterations and exact fixed points") {
    const Affine a = random_affine(5, 0.5, 5);
    SolverConfig cfg;
    cfg.max_iters = 0;
    const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(5);
    const auto r = solve_anderson<double>(a, x0, cfg);
    CHECK(r.iters == 0);
    CHECK(r.residuals.size() == 1);
    CHECK_FALSE(r.converged);
    CHECK(r.x_star == x0);

    auto identity = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x; };
    const auto s = solve_anderson<double>(identity, Eigen::VectorXd::Ones(5), SolverConfig{});
    CHECK(s.converged);
    CHECK(s.iters == 0);
    CHECK(s.residuals.front() == 0.0);
}

TEST_CASE("divergence is reported") {
    auto expanding = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return 2.0 * x + Eigen::VectorXd::Ones(x.size()); };
    SolverConfig cfg;
    cfg.max_iters = 1000;
    try {
        solve_picard<double>(expanding, Eigen::VectorXd::Zero(4), cfg);
        FAIL("expected NonContractionError");
    } catch (const NonContractionError& e) {
        // Residuals 2^k: the first above 10 is k = 4, the fifth in a row is k = 8.
        CHECK(e.residuals().size() == 9);
    }
    // Anderson solves affine maps outright, so use a map whose residual
    // doubles on every call whatever the input.
    double push = 1.0;
    auto escaping = [&push](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        const Eigen::VectorXd out = x + Eigen::VectorXd::Constant(x.size(), push);
        push *= 2;
        return out;
    };
    try {
        solve_anderson<double>(escaping, Eigen::VectorXd::Zero(4), cfg);
        FAIL("expected NonContractionError");
    } catch (const NonContractionError& e) {
        CHECK(e.residuals().size() == 9);
    }

    auto poisoned = [](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        return x + Eigen::VectorXd::Constant(x.size(), std::nan(""));
    };
    CHECK_THROWS_AS(solve_anderson<double>(poisoned, Eigen::VectorXd::Zero(4), cfg), NonContractionError);
}

TEST_CASE("anderson falls back to a plain step when the mixing solve breaks down") {
    // An infinite regularizer leaves no usable mixing weights.
    auto drift = [](const Eigen::VectorXd& x) -> Eigen::VectorXd { return x + Eigen::VectorXd::Ones(x.size()); };
    SolverConfig cfg;
    cfg.max_iters = 3;
    cfg.anderson_memory = 2;
    cfg.anderson_reg = std::numeric_limits<double>::infinity();
    const auto r = solve_anderson<double>(drift, Eigen::VectorXd::Zero(3), cfg);
    CHECK(r.fallback_steps == 3);
    CHECK(r.x_star == Eigen::VectorXd::Constant(3, 3.0));
}

TEST_CASE("solver config validation") {
    SolverConfig cfg;
    cfg.tol = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.anderson_memory = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.anderson_mixing = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = {};
    cfg.max_iters = -1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("degrad map with a linear network matches the normal-equation solution") {
    // With the identity path and zero gain, S(x) = 0.9 x, so the fixed point
    // solves (2 A^T A + 0.9 I) x = 2 A^T d.
    const Network<double> net(identity_net(1));
    const ParamVector<double> theta = net.init_params();
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor d = random_image(1, 8, 8, 9, 0, 1);
    const DegradProblem<double> problem{net, theta, A, d, 0.5};

    const Eigen::MatrixXd dense = testing::dense_matrix([&](const ImageTensor& x) { return A.apply(x); }, 1, 8, 8);
    const Eigen::MatrixXd lhs = 2 * dense.transpose() * dense + 0.9 * Eigen::MatrixXd::Identity(64, 64);
    const Eigen::VectorXd exact = lhs.ldlt().solve(2 * dense.transpose() * d.vec());

    SolverConfig cfg;
    cfg.tol = 1e-12;
    const auto p = solve_picard(problem, d, cfg);
    const auto q = solve_anderson(problem, d, cfg);
    REQUIRE(p.converged);
    REQUIRE(q.converged);
    CHECK((p.x_star.vec() - exact).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((q.x_star.vec() - exact).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(q.iters <= p.iters);

    // T(x*) = x* and the map matches its definition.
    const ImageTensor tx = t_map(problem, q.x_star);
    CHECK(rms_norm(Eigen::VectorXd(tx.vec() - q.x_star.vec())) <= cfg.tol);
    const ImageTensor x = random_image(1, 8, 8, 10);
    const Eigen::VectorXd manual = x.vec() - 0.5 * (2 * dense.transpose() * (dense * x.vec() - d.vec()) + 0.9 * x.vec());
    CHECK((t_map(problem, x).vec() - manual).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("eta = 0 leaves every point fixed") {
    const Network<double> net(identity_net(1));
    const ParamVector<double> theta = net.init_params();
    const GaussianBlur A(make_gaussian_kernel<double>());
    const ImageTensor d = random_image(1, 8, 8, 11);
    const DegradProblem<double> problem{net, theta, A, d, 0.0};
    const auto r = solve_anderson(problem, d, SolverConfig{});
    CHECK(r.converged);
    CHECK(r.iters == 0);
    CHECK(r.x_star.vec() == d.vec());
    const DegradProblem<double> negative{net, theta, A, d, -0.1};
    CHECK_THROWS_AS(t_map(negative, d), std::invalid_argument);
    CHECK_THROWS_AS(solve_anderson(problem, random_image(1, 8, 9, 1), SolverConfig{}), std::invalid_argument);
}

TEST_CASE("residual history CSV") {
    const Affine a = random_affine(4, 0.5, 12);
    const auto r = solve_anderson<double>(a, Eigen::VectorXd::Zero(4), SolverConfig{});
    std::ostringstream out;
    write_residual_csv(out, r);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "iter,residual");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        CHECK(std::stoul(line.substr(0, comma)) == rows);
        CHECK(std::stod(line.substr(comma + 1)) == r.residuals[rows]);
        ++rows;
    }
    CHECK(rows == r.residuals.size());
}
