#include "degrad/checkpoint.hpp"
#include "degrad/config.hpp"
#include "degrad/dataset.hpp"
#include "degrad/io.hpp"
#include "degrad/training.hpp"

#include "support.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace degrad;
using testing::random_image;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("degrad_test_" + name)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

std::string bytes_of(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

RunConfig tiny_config() {
    RunConfig cfg;
    cfg.image_size = 16;
    cfg.train_count = 6;
    cfg.val_count = 2;
    cfg.test_count = 2;
    cfg.batch_size = 3;
    cfg.epochs = 2;
    cfg.net.n_layers = 3;
    cfg.net.hidden_channels = 4;
    cfg.net.spectral_grid = 16;
    cfg.eta = 0.3;
    cfg.solver.tol = 1e-8;
    cfg.solver.max_iters = 200;
    cfg.pretrain_steps = 20;
    cfg.seed = 3;
    return cfg;
}

struct Batch {
    std::vector<ImageTensor> measurements, truths;
};

Batch make_batch(const RunConfig& cfg, int n) {
    const GaussianBlur A = make_blur(cfg);
    Batch b;
    for (int i = 0; i < n; ++i) {
        b.truths.push_back(synthetic_shapes(cfg.image_size, cfg.channels, 100 + i));
        b.measurements.push_back(make_measurement(A, b.truths.back(), cfg.noise_sigma, 200 + i));
    }
    return b;
}

} // namespace

TEST_CASE("config text round-trips every key") {
    RunConfig cfg;
    cfg.image_size = 24;
    cfg.noise_sigma = 0.0123456789012345;
    cfg.optimizer = Optimizer::adam;
    cfg.scheme = GradScheme::neumann(4);
    cfg.solver.anderson_reg = 1.0 / 3.0;
    cfg.net.normalization = Normalization::affine;
    cfg.net.init = Init::uniform;
    cfg.bench_sizes = {8, 24};
    cfg.cg_fallback = false;
    cfg.seed = 18446744073709551615ULL;
    cfg.source_dir = "images dir/with spaces";
    std::ostringstream a;
    write_config(a, cfg);
    std::istringstream in(a.str());
    const RunConfig back = read_config(in);
    std::ostringstream b;
    write_config(b, back);
    CHECK(a.str() == b.str());
    CHECK(back.noise_sigma == cfg.noise_sigma);
    CHECK(back.solver.anderson_reg == cfg.solver.anderson_reg);
    CHECK(back.seed == cfg.seed);
    CHECK(back.bench_sizes == cfg.bench_sizes);
    CHECK(back.source_dir == cfg.source_dir);
    CHECK(back.scheme.kind == GradKind::neumann);
    CHECK(a.str().rfind(std::string("format = ") + config_format_tag, 0) == 0);

    for (const ConfigKey& key : config_keys()) {
        RunConfig c = cfg;
        const std::string text = key.get(c);
        key.set(c, text);
        CHECK(key.get(c) == text);
    }
}

TEST_CASE("config parsing errors") {
    auto parse = [](const std::string& text) {
        std::istringstream in(text);
        return read_config(in);
    };
    CHECK_NOTHROW(parse("format = degrad-config/1\n# comment\n\nepochs = 3  # trailing\n"));
    CHECK(parse("format = degrad-config/1\nepochs = 3\n").epochs == 3);
    CHECK_THROWS_AS(parse("epochs = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse("format = degrad-config/2\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse("format = degrad-config/1\nepoch = 3\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse("format = degrad-config/1\nepochs = three\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse("format = degrad-config/1\nepochs = 3.5\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse("format = degrad-config/1\noptimizer = rmsprop\n"), std::invalid_argument);
    CHECK_THROWS_AS(parse("format = degrad-config/1\nepochs\n"), std::invalid_argument);

    RunConfig cfg;
    set_config_value(cfg, "channels", "3");
    CHECK(cfg.net.image_channels == 3);
    CHECK_THROWS_AS(set_config_value(cfg, "nope", "1"), std::invalid_argument);
    cfg.channels = 2;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    CHECK_NOTHROW(RunConfig::full_scale().validate());
    CHECK(RunConfig::full_scale().image_size == 128);
}

TEST_CASE("config sidecar sits next to the report") {
    TempDir dir("sidecar");
    RunConfig cfg;
    cfg.epochs = 7;
    write_config_sidecar(dir / "report.csv", cfg);
    CHECK(load_config(dir / "report.csv.config").epochs == 7);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    TempDir dir("ckpt");
    for (Normalization norm : {Normalization::none, Normalization::affine}) {
        RunConfig cfg = tiny_config();
        cfg.net.normalization = norm;
        Model model = make_model(cfg);
        update_normalization_stats(model.net, model.theta, make_batch(cfg, 2).measurements);
        model.theta = normalize_spectral(model.net, model.theta, 3);

        const std::string first = dir / "a.ckpt", second = dir / "b.ckpt";
        save_checkpoint(first, model.net, model.theta);
        const Model loaded = load_checkpoint(first);
        save_checkpoint(second, loaded.net, loaded.theta);
        CHECK(bytes_of(first) == bytes_of(second));
        CHECK(loaded.theta.data == model.theta.data);
        CHECK(loaded.net.sigmas() == model.net.sigmas());
        CHECK(loaded.net.right_vectors() == model.net.right_vectors());
        CHECK(loaded.net.running_vars() == model.net.running_vars());
        const ImageTensor x = random_image(1, 16, 16, 4);
        CHECK(forward(loaded.net, loaded.theta, x).vec() == forward(model.net, model.theta, x).vec());
    }

    RunConfig cfg = tiny_config();
    Model model = make_model(cfg);
    std::ostringstream out;
    write_checkpoint(out, model.net, model.theta);
    const std::string bytes = out.str();
    std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
    CHECK_THROWS_AS(read_checkpoint(truncated), IoError);
    std::istringstream trailing(bytes + "x");
    CHECK_THROWS_AS(read_checkpoint(trailing), IoError);
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    std::istringstream magic(bad_magic);
    CHECK_THROWS_AS(read_checkpoint(magic), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
}

TEST_CASE("tensor files are exact") {
    TempDir dir("tensor");
    const ImageTensor x = random_image(3, 5, 7, 1);
    write_tensor(dir / "x.dgt", x);
    const ImageTensor y = read_tensor(dir / "x.dgt");
    CHECK(y.channels() == 3);
    CHECK(y.height() == 5);
    CHECK(y.width() == 7);
    CHECK(y.vec() == x.vec());
    std::istringstream garbage("not a tensor");
    CHECK_THROWS_AS(read_tensor(garbage), IoError);
}

TEST_CASE("pgm and png round trips within quantization") {
    TempDir dir("images");
    const ImageTensor gray = random_image(1, 9, 13, 2, 0, 1);
    const ImageTensor rgb = random_image(3, 6, 5, 3, 0, 1);
    struct Case {
        std::string name;
        const ImageTensor* img;
        int bits;
    };
    for (const Case& c : {Case{"g8.pgm", &gray, 8}, Case{"g16.pgm", &gray, 16}, Case{"g8.png", &gray, 8},
                          Case{"g16.png", &gray, 16}, Case{"c8.png", &rgb, 8}, Case{"c16.png", &rgb, 16}}) {
        write_image(dir / c.name, *c.img, c.bits);
        const ImageTensor back = read_image(dir / c.name);
        REQUIRE(back.same_shape(*c.img));
        const double step = 1.0 / ((1 << c.bits) - 1);
        CHECK((back.vec() - c.img->vec()).cwiseAbs().maxCoeff() <= 0.5 * step + 1e-12);
    }
    // Out-of-range values are clamped.
    ImageTensor wild = gray;
    wild(0, 0, 0) = -3;
    wild(0, 0, 1) = 7;
    write_image(dir / "wild.png", wild);
    const ImageTensor clamped = read_image(dir / "wild.png");
    CHECK(clamped(0, 0, 0) == 0.0);
    CHECK(clamped(0, 0, 1) == 1.0);

    CHECK_THROWS_AS(write_image(dir / "c.pgm", rgb), std::exception);
    CHECK_THROWS_AS(write_image(dir / "x.bmp", gray), std::exception);
}

TEST_CASE("ascii pgm and channel conversion") {
    TempDir dir("ascii");
    {
        std::ofstream out(dir / "a.pgm");
        out << "P2\n# comment\n3 2\n255\n0 51 102\n153 204 255\n";
    }
    const ImageTensor a = read_image(dir / "a.pgm");
    CHECK(a.channels() == 1);
    CHECK(a(0, 0, 1) == doctest::Approx(0.2));
    CHECK(a(0, 1, 2) == 1.0);
    const ImageTensor as_rgb = read_image(dir / "a.pgm", 3);
    CHECK(as_rgb.channels() == 3);
    CHECK(as_rgb.plane(2) == a.plane(0));

    ImageTensor rgb(3, 1, 1);
    rgb(0, 0, 0) = 1.0;
    write_image(dir / "red.png", rgb, 16);
    CHECK(read_image(dir / "red.png", 1)(0, 0, 0) == doctest::Approx(0.299).epsilon(1e-4));

    {
        std::ofstream out(dir / "broken.pgm");
        out << "P5\n4 4\n255\n\x01\x02";
    }
    CHECK_THROWS_AS(read_image(dir / "broken.pgm"), IoError);
    CHECK_THROWS_AS(read_image(dir / "missing.png"), IoError);

    write_image(dir / "whole.png", random_image(1, 32, 32, 5, 0, 1));
    const std::string png = bytes_of(dir / "whole.png");
    {
        std::ofstream out(dir / "cut.png", std::ios::binary);
        out << png.substr(0, png.size() / 2);
    }
    CHECK_THROWS_AS(read_image(dir / "cut.png"), IoError);
}

TEST_CASE("seeds, preprocessing and synthetic images") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));

    const ImageTensor s = synthetic_shapes(32, 3, 5);
    CHECK(s.vec() == synthetic_shapes(32, 3, 5).vec());
    CHECK(s.vec() != synthetic_shapes(32, 3, 6).vec());
    CHECK(s.vec().minCoeff() >= 0.0);
    CHECK(s.vec().maxCoeff() <= 1.0);

    const ImageTensor raw = random_image(2, 40, 50, 7, -0.2, 1.3);
    const ImageTensor p = preprocess(raw, 16);
    CHECK(p.height() == 16);
    CHECK(p.width() == 16);
    for (int c = 0; c < 2; ++c) CHECK(p.plane(c).mean() == doctest::Approx(0.5).epsilon(1e-12));

    const ImageTensor flat = resize_bilinear(ImageTensor::constant(1, 7, 9, 0.25), 20, 3);
    CHECK((flat.vec().array() - 0.25).abs().maxCoeff() < 1e-15);
    const ImageTensor same = resize_bilinear(raw, 40, 50);
    CHECK((same.vec() - raw.vec()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("measurement noise has the configured variance") {
    RunConfig cfg;
    const GaussianBlur A = make_blur(cfg);
    const ImageTensor x = synthetic_shapes(64, 1, 1);
    const double sigma = 0.05;
    const ImageTensor d = make_measurement(A, x, sigma, 9);
    const Eigen::VectorXd noise = d.vec() - A.apply(x).vec();
    const double n = double(noise.size());
    const double var = noise.squaredNorm() / n;
    // Chi-square with n degrees of freedom: sd of the variance estimate is sigma^2 sqrt(2/n).
    CHECK(std::abs(var - sigma * sigma) < 5 * sigma * sigma * std::sqrt(2 / n));
    CHECK(std::abs(noise.mean()) < 5 * sigma / std::sqrt(n));
    CHECK(make_measurement(A, x, sigma, 9).vec() == d.vec());
    CHECK(make_measurement(A, x, 0.0, 9).vec() == A.apply(x).vec());
}

TEST_CASE("dataset generation is deterministic and complete") {
    TempDir dir("data");
    RunConfig cfg = tiny_config();
    cfg.data_dir = dir / "a";
    const DatasetManifest m = generate_dataset(cfg);
    CHECK(m.count("train") == 6);
    CHECK(m.count("val") == 2);
    CHECK(m.count("test") == 2);
    CHECK(m.skipped == 0);
    CHECK(fs::exists(dir / "a/manifest.csv"));

    const DatasetManifest read = read_manifest(cfg.data_dir);
    REQUIRE(read.entries.size() == m.entries.size());
    for (std::size_t i = 0; i < m.entries.size(); ++i) {
        CHECK(read.entries[i].truth == m.entries[i].truth);
        CHECK(read.entries[i].seed == m.entries[i].seed);
        CHECK(read.entries[i].split == m.entries[i].split);
    }
    const SampleSet train = load_split(read, "train");
    REQUIRE(train.size() == 6);
    CHECK(train[0].truth.height() == 16);
    CHECK(train[0].truth.plane(0).mean() == doctest::Approx(0.5).epsilon(1e-12));

    RunConfig again = cfg;
    again.data_dir = dir / "b";
    generate_dataset(again);
    const SampleSet train_b = load_split(read_manifest(again.data_dir), "train");
    for (std::size_t i = 0; i < train.size(); ++i) {
        CHECK(train[i].truth.vec() == train_b[i].truth.vec());
        CHECK(train[i].measurement.vec() == train_b[i].measurement.vec());
    }

    RunConfig other = cfg;
    other.data_dir = dir / "c";
    other.seed = 4;
    generate_dataset(other);
    CHECK(load_split(read_manifest(other.data_dir), "train")[0].truth.vec() != train[0].truth.vec());
    CHECK_THROWS_AS(read_manifest(dir / "missing"), IoError);
}

TEST_CASE("dataset from a source directory skips unreadable files") {
    TempDir dir("sources");
    fs::create_directories(dir.path / "src");
    for (int i = 0; i < 5; ++i)
        write_image(dir / ("src/img" + std::to_string(i) + ".png"), synthetic_shapes(24, 1, 40 + i));
    {
        std::ofstream bad(dir / "src/corrupt.png");
        bad << "definitely not a png";
    }
    RunConfig cfg = tiny_config();
    cfg.source_dir = (dir.path / "src").string();
    cfg.data_dir = dir / "data";
    cfg.train_count = 3;
    cfg.val_count = 1;
    cfg.test_count = 1;
    const DatasetManifest m = generate_dataset(cfg);
    CHECK(m.skipped == 1);
    CHECK(m.entries.size() == 5);
    for (const ManifestEntry& e : m.entries) CHECK(e.source.find("img") != std::string::npos);

    cfg.train_count = 10;
    cfg.data_dir = dir / "too_many";
    CHECK_THROWS_AS(generate_dataset(cfg), std::invalid_argument);
}

TEST_CASE("a zero learning rate leaves the parameters bitwise unchanged") {
    for (Optimizer kind : {Optimizer::sgd, Optimizer::adam}) {
        RunConfig cfg = tiny_config();
        Model model = make_model(cfg);
        const Batch batch = make_batch(cfg, 3);
        const GaussianBlur A = make_blur(cfg);
        const ParamVector<double> before = model.theta;
        const auto right = model.net.right_vectors();
        OptimizerState<double> opt(kind, 0.0);
        for (int step = 0; step < 3; ++step) {
            const auto g = parameter_update(model.net, model.theta, opt, A, batch.measurements, batch.truths, cfg.eta,
                                            cfg.solver, GradScheme::jfb(), true, 1);
            REQUIRE(g.used == 3);
            CHECK(g.grad.norm() > 0);
        }
        CHECK(model.theta.data == before.data);
        CHECK(model.net.right_vectors() == right);
    }
}

TEST_CASE("neumann-0 training follows the jfb trajectory exactly") {
    RunConfig cfg = tiny_config();
    const Batch batch = make_batch(cfg, 3);
    const GaussianBlur A = make_blur(cfg);
    Model a = make_model(cfg), b = make_model(cfg);
    OptimizerState<double> opt_a(Optimizer::sgd, 1e-2), opt_b(Optimizer::sgd, 1e-2);
    for (int step = 0; step < 4; ++step) {
        parameter_update(a.net, a.theta, opt_a, A, batch.measurements, batch.truths, cfg.eta, cfg.solver,
                         GradScheme::jfb(), true, 1);
        parameter_update(b.net, b.theta, opt_b, A, batch.measurements, batch.truths, cfg.eta, cfg.solver,
                         GradScheme::neumann(0), true, 1);
        CHECK(a.theta.data == b.theta.data);
    }
    CHECK(a.theta.data != make_model(cfg).theta.data);
}

TEST_CASE("batch gradients do not depend on the thread count") {
    RunConfig cfg = tiny_config();
    const Batch batch = make_batch(cfg, 5);
    const GaussianBlur A = make_blur(cfg);
    const Model model = make_model(cfg);
    const auto one = batch_gradient(model.net, model.theta, A, batch.measurements, batch.truths, cfg.eta, cfg.solver,
                                    GradScheme::jacobian_cg(), true, 1);
    const auto three = batch_gradient(model.net, model.theta, A, batch.measurements, batch.truths, cfg.eta,
                                      cfg.solver, GradScheme::jacobian_cg(), true, 3);
    CHECK(one.grad == three.grad);
    CHECK(one.loss_sum == three.loss_sum);
    CHECK(one.used == 5);
}

TEST_CASE("cg failures fall back to jfb or skip the sample") {
    RunConfig cfg = tiny_config();
    const Batch batch = make_batch(cfg, 1);
    const GaussianBlur A = make_blur(cfg);
    const Model model = make_model(cfg);
    const GradScheme starved = GradScheme::jacobian_cg(1e-14, 1);
    const auto fallback = sample_gradient(model.net, model.theta, A, batch.measurements[0], batch.truths[0], cfg.eta,
                                          cfg.solver, starved, true);
    CHECK(fallback.fell_back);
    const auto jfb = sample_gradient(model.net, model.theta, A, batch.measurements[0], batch.truths[0], cfg.eta,
                                     cfg.solver, GradScheme::jfb(), true);
    CHECK(fallback.grad == jfb.grad);
    const auto strict = sample_gradient(model.net, model.theta, A, batch.measurements[0], batch.truths[0], cfg.eta,
                                        cfg.solver, starved, false);
    CHECK(strict.status == SampleGradient<double>::Status::cg_failed);
    const auto batch_strict = batch_gradient(model.net, model.theta, A, batch.measurements, batch.truths, cfg.eta,
                                             cfg.solver, starved, false, 1);
    CHECK(batch_strict.skipped == 1);
    CHECK(batch_strict.used == 0);
}

TEST_CASE("adam's first step has the learning rate as its size") {
    ParamVector<double> theta{Eigen::VectorXd::Zero(3), {}};
    OptimizerState<double> adam(Optimizer::adam, 0.01);
    adam.step(theta, Eigen::Vector3d(2.0, -0.5, 1e-3));
    CHECK(theta.data[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(theta.data[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(theta.data[2] == doctest::Approx(-0.01).epsilon(1e-4));
    ParamVector<double> plain{Eigen::VectorXd::Ones(2), {}};
    OptimizerState<double> sgd(Optimizer::sgd, 0.5);
    sgd.step(plain, Eigen::Vector2d(1.0, -2.0));
    CHECK(plain.data == Eigen::Vector2d(0.5, 2.0));
}

TEST_CASE("pretraining lowers the denoising loss") {
    RunConfig cfg = tiny_config();
    cfg.pretrain_steps = 60;
    cfg.noise_sigma = 0.1;
    cfg.optimizer = Optimizer::adam;
    cfg.pretrain_learning_rate = 3e-3;
    const Batch batch = make_batch(cfg, 6);
    SampleSet set;
    for (int i = 0; i < 6; ++i) set.push_back({batch.truths[i], batch.measurements[i], 0});
    Model model = make_model(cfg);
    const PretrainReport r = pretrain(model, set, cfg);
    REQUIRE(r.losses.size() == 60);
    const auto mean = [&](std::size_t from, std::size_t to) {
        double s = 0;
        for (std::size_t i = from; i < to; ++i) s += r.losses[i];
        return s / double(to - from);
    };
    CHECK(mean(50, 60) < 0.5 * mean(0, 10));
}

TEST_CASE("training writes one csv row per epoch and is reproducible") {
    RunConfig cfg = tiny_config();
    cfg.optimizer = Optimizer::adam;
    cfg.learning_rate = 1e-3;
    const Batch batch = make_batch(cfg, 8);
    SampleSet train_set, val_set;
    for (int i = 0; i < 6; ++i) train_set.push_back({batch.truths[i], batch.measurements[i], 0});
    for (int i = 6; i < 8; ++i) val_set.push_back({batch.truths[i], batch.measurements[i], 0});

    Model a = make_model(cfg), b = make_model(cfg);
    std::ostringstream csv;
    const TrainReport ra = train(a, train_set, val_set, cfg, &csv);
    const TrainReport rb = train(b, train_set, val_set, cfg);
    CHECK(a.theta.data == b.theta.data);
    CHECK(ra.final_train_mse == rb.final_train_mse);
    REQUIRE(ra.epochs.size() == 2);

    std::istringstream lines(csv.str());
    std::string line;
    std::getline(lines, line);
    CHECK(line == epoch_csv_header);
    int rows = 0;
    while (std::getline(lines, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 7);
        ++rows;
    }
    CHECK(rows == 2);
    CHECK(ra.final_train_mse < ra.initial_train_mse);
}

TEST_CASE("thread count comes from the environment") {
    ::setenv("DEGRAD_THREADS", "3", 1);
    CHECK(thread_count() == 3);
    ::setenv("DEGRAD_THREADS", "zero", 1);
    CHECK_THROWS_AS(thread_count(), std::invalid_argument);
    ::unsetenv("DEGRAD_THREADS");
    CHECK(thread_count() == 1);

    std::vector<int> hits(50, 0);
    parallel_for(50, 4, [&](int i) { hits[i] += 1; });
    CHECK(std::count(hits.begin(), hits.end(), 1) == 50);
    CHECK_THROWS_AS(parallel_for(10, 3, [](int i) { if (i == 7) throw std::runtime_error("boom"); }),
                    std::runtime_error);
}
