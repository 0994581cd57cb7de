#pragma once

#include "degrad/blur.hpp"
#include "degrad/config.hpp"
#include "degrad/image.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace degrad {

struct ManifestEntry {
    std::string split;
    /// Tensor files, relative to the dataset directory.
    std::string truth;
    std::string measurement;
    /// Seed of the measurement noise.
    std::uint64_t seed = 0;
    /// Originating file, or "synthetic:<index>".
    std::string source;
};

struct DatasetManifest {
    std::string root;
    std::vector<ManifestEntry> entries;
    /// Source files that could not be read.
    int skipped = 0;

    std::size_t count(const std::string& split) const;
};

struct Sample {
    ImageTensor truth;
    ImageTensor measurement;
    std::uint64_t seed = 0;
};

using SampleSet = std::vector<Sample>;

inline constexpr const char* manifest_format_tag = "degrad-manifest/1";

/// splitmix64 of (global, stream): independent per-purpose/per-image seeds.
std::uint64_t derive_seed(std::uint64_t global, std::uint64_t stream);

GaussianBlur make_blur(const RunConfig& cfg);

/// Bilinear resampling with pixel centres aligned (half-pixel convention).
ImageTensor resize_bilinear(const ImageTensor& img, int height, int width);

/// Resize to size x size, clamp to [0,1], then shift each channel so its mean
/// is 1/2.
ImageTensor preprocess(const ImageTensor& raw, int size);

/// Piecewise-constant test image: a faint linear ramp with two to five
/// ellipses and rectangles of random intensity. Values lie in [0,1].
ImageTensor synthetic_shapes(int size, int channels, std::uint64_t seed);

/// d = A x + noise, noise i.i.d. N(0, sigma^2) drawn from `seed`.
ImageTensor make_measurement(const GaussianBlur& A, const ImageTensor& truth, double sigma, std::uint64_t seed);

/// Builds train/val/test splits from cfg.source_dir (every readable PGM/PNG,
/// in sorted name order, shuffled by the seed) or, when it is empty, from
/// synthetic shapes; writes tensors and manifest.csv under cfg.data_dir.
DatasetManifest generate_dataset(const RunConfig& cfg);

void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& data_dir);

/// Loads every sample tagged `split`, in manifest order.
SampleSet load_split(const DatasetManifest& manifest, const std::string& split);

} // namespace degrad
