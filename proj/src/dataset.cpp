#include "degrad/dataset.hpp"

#include "degrad/io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>

namespace fs = std::filesystem;

namespace degrad {

namespace {

constexpr std::uint64_t noise_stream = 0x6e6f697365ULL;
constexpr std::uint64_t shapes_stream = 0x7368617065ULL;
constexpr std::uint64_t shuffle_stream = 0x73687566ULL;

bool has_image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return ext == ".pgm" || ext == ".png";
}

std::string padded(std::size_t i) {
    std::string s = std::to_string(i);
    return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream in(line);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(item);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

} // namespace

std::size_t DatasetManifest::count(const std::string& split) const {
    return std::size_t(std::count_if(entries.begin(), entries.end(), [&](const ManifestEntry& e) { return e.split == split; }));
}

std::uint64_t derive_seed(std::uint64_t global, std::uint64_t stream) {
    std::uint64_t z = global + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

GaussianBlur make_blur(const RunConfig& cfg) {
    return GaussianBlur(make_gaussian_kernel<double>(cfg.blur_size, cfg.blur_variance));
}

ImageTensor resize_bilinear(const ImageTensor& img, int height, int width) {
    if (height < 1 || width < 1) throw std::invalid_argument("resize target must be positive");
    if (height == img.height() && width == img.width()) return img;
    ImageTensor out(img.channels(), height, width);
    const double sy = double(img.height()) / height, sx = double(img.width()) / width;
    for (int i = 0; i < height; ++i) {
        const double y = std::clamp((i + 0.5) * sy - 0.5, 0.0, double(img.height() - 1));
        const int y0 = int(y), y1 = std::min(y0 + 1, img.height() - 1);
        const double fy = y - y0;
        for (int j = 0; j < width; ++j) {
            const double x = std::clamp((j + 0.5) * sx - 0.5, 0.0, double(img.width() - 1));
            const int x0 = int(x), x1 = std::min(x0 + 1, img.width() - 1);
            const double fx = x - x0;
            for (int c = 0; c < img.channels(); ++c)
                out(c, i, j) = (1 - fy) * ((1 - fx) * img(c, y0, x0) + fx * img(c, y0, x1)) +
                               fy * ((1 - fx) * img(c, y1, x0) + fx * img(c, y1, x1));
        }
    }
    return out;
}

ImageTensor preprocess(const ImageTensor& raw, int size) {
    ImageTensor x = resize_bilinear(raw, size, size);
    x.vec() = x.vec().cwiseMax(0.0).cwiseMin(1.0);
    for (int c = 0; c < x.channels(); ++c) {
        auto p = x.plane(c);
        p.array() += 0.5 - p.mean();
    }
    return x;
}

ImageTensor synthetic_shapes(int size, int channels, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    ImageTensor img(channels, size, size);
    const double ramp_x = u(rng), ramp_y = u(rng);
    for (int c = 0; c < channels; ++c) {
        const double base = 0.3 + 0.1 * u(rng);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) img(c, i, j) = base + 0.2 * (ramp_x * j + ramp_y * i) / size;
    }
    const int shapes = 2 + int(u(rng) * 4);
    for (int s = 0; s < shapes; ++s) {
        const double cx = u(rng) * size, cy = u(rng) * size;
        const double rx = (0.1 + 0.25 * u(rng)) * size, ry = (0.1 + 0.25 * u(rng)) * size;
        const bool ellipse = u(rng) < 0.5;
        std::vector<double> value(channels);
        for (double& v : value) v = u(rng);
        for (int i = 0; i < size; ++i)
            for (int j = 0; j < size; ++j) {
                const double dx = (j - cx) / rx, dy = (i - cy) / ry;
                const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
                if (inside)
                    for (int c = 0; c < channels; ++c) img(c, i, j) = value[c];
            }
    }
    return img;
}

ImageTensor make_measurement(const GaussianBlur& A, const ImageTensor& truth, double sigma, std::uint64_t seed) {
    ImageTensor d = A.apply(truth);
    if (sigma == 0) return d;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (Eigen::Index i = 0; i < d.size(); ++i) d.vec()[i] += noise(rng);
    return d;
}

DatasetManifest generate_dataset(const RunConfig& cfg) {
    cfg.validate();
    const std::size_t wanted = std::size_t(cfg.train_count) + cfg.val_count + cfg.test_count;
    if (wanted == 0) throw std::invalid_argument("dataset would be empty");
    DatasetManifest manifest;
    manifest.root = cfg.data_dir;

    std::vector<ImageTensor> truths;
    std::vector<std::string> sources;
    if (cfg.source_dir.empty()) {
        for (std::size_t i = 0; i < wanted; ++i) {
            truths.push_back(preprocess(synthetic_shapes(cfg.image_size, cfg.channels, derive_seed(cfg.seed, shapes_stream + i)),
                                        cfg.image_size));
            sources.push_back("synthetic:" + std::to_string(i));
        }
    } else {
        if (!fs::is_directory(cfg.source_dir)) throw IoError("source directory not found: " + cfg.source_dir);
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(cfg.source_dir))
            if (entry.is_regular_file() && has_image_extension(entry.path())) files.push_back(entry.path());
        if (files.empty()) throw IoError("no PGM or PNG images in " + cfg.source_dir);
        std::sort(files.begin(), files.end());
        std::mt19937_64 rng(derive_seed(cfg.seed, shuffle_stream));
        std::shuffle(files.begin(), files.end(), rng);
        for (const fs::path& f : files) {
            if (truths.size() == wanted) break;
            try {
                truths.push_back(preprocess(read_image(f.string(), cfg.channels), cfg.image_size));
                sources.push_back(f.filename().string());
            } catch (const std::exception& e) {
                ++manifest.skipped;
                std::cerr << "warning: skipping " << f.string() << ": " << e.what() << '\n';
            }
        }
        if (truths.size() < wanted)
            throw std::invalid_argument("source directory has " + std::to_string(truths.size()) +
                                        " usable images, splits need " + std::to_string(wanted));
    }

    const GaussianBlur A = make_blur(cfg);
    fs::create_directories(cfg.data_dir);
    for (const char* split : {"train", "val", "test"}) fs::create_directories(fs::path(cfg.data_dir) / split);
    for (std::size_t i = 0; i < wanted; ++i) {
        const char* split = i < std::size_t(cfg.train_count)                    ? "train"
                            : i < std::size_t(cfg.train_count + cfg.val_count) ? "val"
                                                                                 : "test";
        ManifestEntry e;
        e.split = split;
        e.truth = std::string(split) + "/" + padded(i) + "_truth.dgt";
        e.measurement = std::string(split) + "/" + padded(i) + "_measurement.dgt";
        e.seed = derive_seed(cfg.seed, noise_stream + i);
        e.source = sources[i];
        write_tensor((fs::path(cfg.data_dir) / e.truth).string(), truths[i]);
        write_tensor((fs::path(cfg.data_dir) / e.measurement).string(),
                     make_measurement(A, truths[i], cfg.noise_sigma, e.seed));
        manifest.entries.push_back(std::move(e));
    }
    const std::string path = (fs::path(cfg.data_dir) / "manifest.csv").string();
    write_manifest(path, manifest);
    write_config_sidecar(path, cfg);
    return manifest;
}

void write_manifest(const std::string& path, const DatasetManifest& manifest) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "# " << manifest_format_tag << '\n';
    out << "# skipped=" << manifest.skipped << '\n';
    out << "split,truth,measurement,seed,source\n";
    for (const ManifestEntry& e : manifest.entries)
        out << e.split << ',' << e.truth << ',' << e.measurement << ',' << e.seed << ',' << e.source << '\n';
    if (!out) throw IoError("failed writing " + path);
}

DatasetManifest read_manifest(const std::string& data_dir) {
    const std::string path = (fs::path(data_dir) / "manifest.csv").string();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);
    DatasetManifest manifest;
    manifest.root = data_dir;
    std::string line;
    bool header = false, tagged = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line == std::string("# ") + manifest_format_tag) tagged = true;
            if (line.rfind("# skipped=", 0) == 0) manifest.skipped = std::stoi(line.substr(10));
            continue;
        }
        if (!header) {
            if (line != "split,truth,measurement,seed,source") throw IoError(path + ": unexpected header");
            header = true;
            continue;
        }
        const std::vector<std::string> f = split_csv(line);
        if (f.size() != 5) throw IoError(path + ": malformed row: " + line);
        if (f[0] != "train" && f[0] != "val" && f[0] != "test") throw IoError(path + ": unknown split " + f[0]);
        manifest.entries.push_back({f[0], f[1], f[2], std::stoull(f[3]), f[4]});
    }
    if (!tagged || !header) throw IoError(path + ": not a dataset manifest");
    return manifest;
}

SampleSet load_split(const DatasetManifest& manifest, const std::string& split) {
    SampleSet out;
    for (const ManifestEntry& e : manifest.entries) {
        if (e.split != split) continue;
        Sample s{read_tensor((fs::path(manifest.root) / e.truth).string()),
                 read_tensor((fs::path(manifest.root) / e.measurement).string()), e.seed};
        if (!s.truth.same_shape(s.measurement)) throw IoError("truth and measurement shapes differ for " + e.truth);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace degrad
