#pragma once

#include "degrad/backprop.hpp"
#include "degrad/baselines.hpp"
#include "degrad/fixed_point.hpp"
#include "degrad/network.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace degrad {

enum class Optimizer { sgd, adam };

struct RunConfig {
    // Data.
    int image_size = 32;
    int channels = 1;
    double noise_sigma = 1e-2;
    int train_count = 64;
    int val_count = 16;
    int test_count = 16;
    double blur_variance = 1.0;
    int blur_size = 5;

    // Training.
    int batch_size = 16;
    int epochs = 30;
    double learning_rate = 1e-3;
    Optimizer optimizer = Optimizer::sgd;
    double eta = 0.1;
    GradScheme scheme;
    bool cg_fallback = true;
    int pretrain_steps = 400;
    double pretrain_learning_rate = 1e-3;
    int init_power_iters = 20;
    std::uint64_t seed = 0;
    SolverConfig solver;
    NetConfig net;

    // Baselines and evaluation.
    BaselineConfig baseline;
    int gd_max_steps = 500;

    // Bench.
    std::vector<int> bench_sizes{16, 32, 48, 64, 80, 96, 112, 128};
    int bench_batch = 16;
    int bench_reps = 20;
    int bench_warmup = 2;
    bool bench_single_precision = false;

    // Paths.
    std::string source_dir;
    std::string data_dir = "data";
    std::string init_checkpoint;
    std::string checkpoint = "model.ckpt";
    std::string report = "report.csv";
    std::string output_dir;

    void validate() const;

    /// 128x128 RGB, 8000/1000/1000 split, 64 hidden channels.
    static RunConfig full_scale();
};

inline constexpr const char* config_format_tag = "degrad-config/1";

/// One settable field: name as used in config files and as a --flag.
struct ConfigKey {
    std::string name;
    std::string help;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<ConfigKey>& config_keys();

/// Sets `key` from its text form; throws std::invalid_argument for unknown
/// keys or unparsable values.
void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value);

/// Text form: a `format = degrad-config/1` line, then `key = value` lines;
/// `#` starts a comment. Unknown keys and a missing or different format
/// line are errors.
void write_config(std::ostream& out, const RunConfig& cfg);
RunConfig read_config(std::istream& in, RunConfig base = {});
void save_config(const std::string& path, const RunConfig& cfg);
RunConfig load_config(const std::string& path, RunConfig base = {});

/// Writes `cfg` next to a report as `<report>.config`.
void write_config_sidecar(const std::string& report_path, const RunConfig& cfg);

std::string to_string(Optimizer o);
std::string to_string(Normalization n);
std::string to_string(Init i);

} // namespace degrad
