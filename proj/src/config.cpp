#include "degrad/config.hpp"

#include "degrad/io.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <system_error>

namespace degrad {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& value, const char* what) {
    throw std::invalid_argument("cannot parse '" + value + "' as " + what);
}

double parse_double(const std::string& s) {
    double v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) bad_value(s, "a number");
    return v;
}

long long parse_integer(const std::string& s) {
    long long v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) bad_value(s, "an integer");
    return v;
}

std::uint64_t parse_unsigned(const std::string& s) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) bad_value(s, "an unsigned integer");
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "on" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "off" || s == "no") return false;
    bad_value(s, "a boolean");
}

// Shortest text that reads back to the same double.
std::string format_double(double v) {
    char buf[64];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
}

std::string format_sizes(const std::vector<int>& sizes) {
    std::string out;
    for (std::size_t i = 0; i < sizes.size(); ++i) out += (i ? "," : "") + std::to_string(sizes[i]);
    return out;
}

std::vector<int> parse_sizes(const std::string& s) {
    std::vector<int> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, ',')) out.push_back(int(parse_integer(trim(item))));
    if (out.empty()) bad_value(s, "a comma-separated size list");
    return out;
}

Optimizer parse_optimizer(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    bad_value(s, "an optimizer (sgd, adam)");
}

Normalization parse_normalization(const std::string& s) {
    if (s == "none") return Normalization::none;
    if (s == "affine") return Normalization::affine;
    bad_value(s, "a normalization (none, affine)");
}

Init parse_init(const std::string& s) {
    if (s == "uniform") return Init::uniform;
    if (s == "identity_path") return Init::identity_path;
    bad_value(s, "an init (uniform, identity_path)");
}

template <typename T>
ConfigKey int_key(std::string name, std::string help, T RunConfig::*field) {
    return {std::move(name), std::move(help), [field](const RunConfig& c) { return std::to_string(c.*field); },
            [field](RunConfig& c, const std::string& v) { c.*field = T(parse_integer(v)); }};
}

ConfigKey double_key(std::string name, std::string help, double RunConfig::*field) {
    return {std::move(name), std::move(help), [field](const RunConfig& c) { return format_double(c.*field); },
            [field](RunConfig& c, const std::string& v) { c.*field = parse_double(v); }};
}

ConfigKey string_key(std::string name, std::string help, std::string RunConfig::*field) {
    return {std::move(name), std::move(help), [field](const RunConfig& c) { return c.*field; },
            [field](RunConfig& c, const std::string& v) { c.*field = v; }};
}

ConfigKey bool_key(std::string name, std::string help, bool RunConfig::*field) {
    return {std::move(name), std::move(help), [field](const RunConfig& c) { return std::string(c.*field ? "true" : "false"); },
            [field](RunConfig& c, const std::string& v) { c.*field = parse_bool(v); }};
}

// Nested members: getter/setter pairs written out by hand.
#define DEGRAD_NESTED_INT(key, help, path)                                                                     \
    ConfigKey {                                                                                                \
        key, help, [](const RunConfig& c) { return std::to_string(c.path); },                                  \
            [](RunConfig& c, const std::string& v) { c.path = decltype(c.path)(parse_integer(v)); }           \
    }
#define DEGRAD_NESTED_DOUBLE(key, help, path)                                                                  \
    ConfigKey {                                                                                                \
        key, help, [](const RunConfig& c) { return format_double(c.path); },                                   \
            [](RunConfig& c, const std::string& v) { c.path = parse_double(v); }                               \
    }

std::vector<ConfigKey> build_keys() {
    return {
        int_key("image_size", "image side length in pixels", &RunConfig::image_size),
        int_key("channels", "1 (gray) or 3 (RGB)", &RunConfig::channels),
        double_key("noise_sigma", "measurement noise standard deviation", &RunConfig::noise_sigma),
        int_key("train_count", "training images", &RunConfig::train_count),
        int_key("val_count", "validation images", &RunConfig::val_count),
        int_key("test_count", "test images", &RunConfig::test_count),
        double_key("blur_variance", "Gaussian blur variance in pixels^2", &RunConfig::blur_variance),
        int_key("blur_size", "Gaussian blur kernel side (odd)", &RunConfig::blur_size),
        int_key("batch_size", "images per parameter update", &RunConfig::batch_size),
        int_key("epochs", "training epochs", &RunConfig::epochs),
        double_key("learning_rate", "training step size alpha", &RunConfig::learning_rate),
        {"optimizer", "sgd (plain gradient step) or adam",
         [](const RunConfig& c) { return to_string(c.optimizer); },
         [](RunConfig& c, const std::string& v) { c.optimizer = parse_optimizer(v); }},
        double_key("eta", "step size of the fixed-point map", &RunConfig::eta),
        {"scheme", "gradient scheme: jfb, jacobian_cg or neumann",
         [](const RunConfig& c) { return to_string(c.scheme.kind); },
         [](RunConfig& c, const std::string& v) { c.scheme.kind = parse_grad_kind(v); }},
        DEGRAD_NESTED_DOUBLE("scheme.cg_tol", "relative residual target of the CG solve", scheme.cg_tol),
        DEGRAD_NESTED_INT("scheme.cg_max_iters", "CG iteration cap", scheme.cg_max_iters),
        DEGRAD_NESTED_INT("scheme.neumann_k", "Neumann series terms beyond the first", scheme.neumann_k),
        bool_key("cg_fallback", "use the JFB direction for samples whose CG solve fails", &RunConfig::cg_fallback),
        int_key("pretrain_steps", "denoiser pretraining steps", &RunConfig::pretrain_steps),
        double_key("pretrain_learning_rate", "pretraining step size", &RunConfig::pretrain_learning_rate),
        int_key("init_power_iters", "power iterations for the initial spectral normalization",
                &RunConfig::init_power_iters),
        {"seed", "global seed", [](const RunConfig& c) { return std::to_string(c.seed); },
         [](RunConfig& c, const std::string& v) { c.seed = parse_unsigned(v); }},
        DEGRAD_NESTED_DOUBLE("solver.tol", "fixed-point residual tolerance", solver.tol),
        DEGRAD_NESTED_INT("solver.max_iters", "fixed-point iteration cap", solver.max_iters),
        DEGRAD_NESTED_INT("solver.anderson_memory", "Anderson history length", solver.anderson_memory),
        DEGRAD_NESTED_DOUBLE("solver.anderson_reg", "Anderson least-squares regularization", solver.anderson_reg),
        DEGRAD_NESTED_DOUBLE("solver.anderson_mixing", "Anderson mixing parameter", solver.anderson_mixing),
        DEGRAD_NESTED_INT("net.n_layers", "convolution layers", net.n_layers),
        DEGRAD_NESTED_INT("net.hidden_channels", "hidden channels", net.hidden_channels),
        DEGRAD_NESTED_INT("net.kernel_size", "convolution kernel side", net.kernel_size),
        DEGRAD_NESTED_DOUBLE("net.contraction_scale", "factor applied to the network output", net.contraction_scale),
        {"net.normalization", "none or affine",
         [](const RunConfig& c) { return to_string(c.net.normalization); },
         [](RunConfig& c, const std::string& v) { c.net.normalization = parse_normalization(v); }},
        DEGRAD_NESTED_INT("net.spectral_grid", "grid side for the power iteration", net.spectral_grid),
        {"net.init", "uniform or identity_path", [](const RunConfig& c) { return to_string(c.net.init); },
         [](RunConfig& c, const std::string& v) { c.net.init = parse_init(v); }},
        DEGRAD_NESTED_DOUBLE("net.identity_gain", "scale of the random weights under identity_path init",
                             net.identity_gain),
        DEGRAD_NESTED_DOUBLE("baseline.lambda", "default regularization weight", baseline.lambda),
        DEGRAD_NESTED_INT("baseline.steps", "Tikhonov/TV gradient steps", baseline.steps),
        DEGRAD_NESTED_DOUBLE("baseline.step_size", "Tikhonov/TV step size", baseline.step_size),
        DEGRAD_NESTED_DOUBLE("baseline.tv_smoothing", "TV smoothing beta", baseline.tv_smoothing),
        DEGRAD_NESTED_INT("baseline.early_stop_patience", "TV plateau window", baseline.early_stop_patience),
        int_key("gd_max_steps", "longest plain gradient descent run scanned for early stopping",
                &RunConfig::gd_max_steps),
        {"bench_sizes", "comma-separated image sizes", [](const RunConfig& c) { return format_sizes(c.bench_sizes); },
         [](RunConfig& c, const std::string& v) { c.bench_sizes = parse_sizes(v); }},
        int_key("bench_batch", "images per timed update", &RunConfig::bench_batch),
        int_key("bench_reps", "timed repetitions", &RunConfig::bench_reps),
        int_key("bench_warmup", "untimed warm-up runs", &RunConfig::bench_warmup),
        bool_key("bench_single_precision", "time in single precision", &RunConfig::bench_single_precision),
        string_key("source_dir", "directory of source images (empty: synthetic shapes)", &RunConfig::source_dir),
        string_key("data_dir", "dataset directory", &RunConfig::data_dir),
        string_key("init_checkpoint", "checkpoint to start from", &RunConfig::init_checkpoint),
        string_key("checkpoint", "checkpoint to write (train, pretrain) or read (eval)", &RunConfig::checkpoint),
        string_key("report", "CSV report path", &RunConfig::report),
        string_key("output_dir", "directory for reconstruction images (empty: none)", &RunConfig::output_dir),
    };
}

#undef DEGRAD_NESTED_INT
#undef DEGRAD_NESTED_DOUBLE

} // namespace

void RunConfig::validate() const {
    if (image_size < 1) throw std::invalid_argument("image_size must be positive");
    if (channels != 1 && channels != 3) throw std::invalid_argument("channels must be 1 or 3");
    if (!(noise_sigma >= 0)) throw std::invalid_argument("noise_sigma must be nonnegative");
    if (train_count < 0 || val_count < 0 || test_count < 0) throw std::invalid_argument("split counts must be nonnegative");
    if (!(blur_variance > 0)) throw std::invalid_argument("blur_variance must be positive");
    if (blur_size < 1 || blur_size % 2 == 0) throw std::invalid_argument("blur_size must be odd and positive");
    if (image_size < blur_size) throw std::invalid_argument("image_size must be at least the blur kernel size");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
    if (epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
    if (!(learning_rate >= 0)) throw std::invalid_argument("learning_rate must be nonnegative");
    if (!(eta > 0)) throw std::invalid_argument("eta must be positive");
    if (pretrain_steps < 0) throw std::invalid_argument("pretrain_steps must be nonnegative");
    if (!(pretrain_learning_rate >= 0)) throw std::invalid_argument("pretrain_learning_rate must be nonnegative");
    if (init_power_iters < 1) throw std::invalid_argument("init_power_iters must be positive");
    if (net.image_channels != channels) throw std::invalid_argument("net image channels must equal channels");
    if (gd_max_steps < 1) throw std::invalid_argument("gd_max_steps must be positive");
    for (int s : bench_sizes)
        if (s < blur_size) throw std::invalid_argument("bench sizes must be at least the blur kernel size");
    if (bench_batch < 1 || bench_reps < 1 || bench_warmup < 0) throw std::invalid_argument("bad bench settings");
    scheme.validate();
    solver.validate();
    net.validate();
    baseline.validate();
}

RunConfig RunConfig::full_scale() {
    RunConfig cfg;
    cfg.image_size = 128;
    cfg.channels = 3;
    cfg.train_count = 8000;
    cfg.val_count = 1000;
    cfg.test_count = 1000;
    cfg.net = NetConfig::full_scale();
    return cfg;
}

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = build_keys();
    return keys;
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
    for (const ConfigKey& k : config_keys()) {
        if (k.name != key) continue;
        k.set(cfg, trim(value));
        // Image channels are a single setting seen from two places.
        if (key == "channels") cfg.net.image_channels = cfg.channels;
        return;
    }
    throw std::invalid_argument("unknown configuration key: " + key);
}

void write_config(std::ostream& out, const RunConfig& cfg) {
    out << "format = " << config_format_tag << '\n';
    for (const ConfigKey& k : config_keys()) out << k.name << " = " << k.get(cfg) << '\n';
}

RunConfig read_config(std::istream& in, RunConfig base) {
    std::string line;
    int lineno = 0;
    bool seen_format = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
        if (key == "format") {
            if (value != config_format_tag)
                throw std::invalid_argument("unsupported config format '" + value + "', expected " + config_format_tag);
            seen_format = true;
            continue;
        }
        if (!seen_format) throw std::invalid_argument("config must start with 'format = " + std::string(config_format_tag) + "'");
        try {
            set_config_value(base, key, value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (!seen_format) throw std::invalid_argument("config has no format line");
    return base;
}

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    write_config(out, cfg);
}

RunConfig load_config(const std::string& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    return read_config(in, std::move(base));
}

void write_config_sidecar(const std::string& report_path, const RunConfig& cfg) {
    save_config(report_path + ".config", cfg);
}

std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }
std::string to_string(Normalization n) { return n == Normalization::affine ? "affine" : "none"; }
std::string to_string(Init i) { return i == Init::identity_path ? "identity_path" : "uniform"; }

} // namespace degrad
