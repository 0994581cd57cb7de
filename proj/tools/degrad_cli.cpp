// Command-line front end: generate-data, pretrain, train, eval, bench.
//
// Every subcommand accepts --config <file> (degrad-config/1 text) and one
// --<key> <value> flag per configuration key; flags override the file.

#include "degrad/bench.hpp"
#include "degrad/checkpoint.hpp"
#include "degrad/config.hpp"
#include "degrad/dataset.hpp"
#include "degrad/evaluation.hpp"
#include "degrad/io.hpp"
#include "degrad/training.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>

namespace {

using namespace degrad;

struct Settings {
    std::string config_file;
    std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App* cmd, Settings& s) {
    cmd->add_option("--config", s.config_file, "key = value configuration file (format = degrad-config/1)");
    for (const ConfigKey& key : config_keys()) cmd->add_option("--" + key.name, s.values[key.name], key.help);
}

RunConfig resolve(const CLI::App* cmd, const Settings& s) {
    RunConfig cfg = s.config_file.empty() ? RunConfig{} : load_config(s.config_file);
    for (const ConfigKey& key : config_keys())
        if (cmd->count("--" + key.name) > 0) set_config_value(cfg, key.name, s.values.at(key.name));
    cfg.validate();
    return cfg;
}

std::ofstream open_report(const std::string& path) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write report " + path);
    return out;
}

Model initial_model(const RunConfig& cfg) {
    if (cfg.init_checkpoint.empty()) return make_model(cfg);
    Model m = load_checkpoint(cfg.init_checkpoint);
    if (m.net.config().image_channels != cfg.channels)
        throw std::invalid_argument("checkpoint channel count does not match the configuration");
    return m;
}

int generate_data(const RunConfig& cfg) {
    const DatasetManifest m = generate_dataset(cfg);
    std::cout << "wrote " << m.entries.size() << " pairs to " << cfg.data_dir << " (train " << m.count("train")
              << ", val " << m.count("val") << ", test " << m.count("test") << ", skipped " << m.skipped << ")\n";
    return 0;
}

int run_pretrain(const RunConfig& cfg) {
    const DatasetManifest manifest = read_manifest(cfg.data_dir);
    const SampleSet train_set = load_split(manifest, "train");
    Model model = initial_model(cfg);
    const PretrainReport report = pretrain(model, train_set, cfg);
    save_checkpoint(cfg.checkpoint, model.net, model.theta);
    std::ofstream out = open_report(cfg.report);
    out << "step,loss\n" << std::setprecision(17);
    for (std::size_t k = 0; k < report.losses.size(); ++k) out << k << ',' << report.losses[k] << '\n';
    write_config_sidecar(cfg.report, cfg);
    if (!report.losses.empty()) {
        std::cout << "pretraining loss " << report.losses.front() << " -> " << report.losses.back() << "\n";
        // sigma^2 is the loss of S = 0: the network has stopped responding to its input.
        const double floor = cfg.noise_sigma * cfg.noise_sigma;
        if (report.losses.back() >= 0.95 * floor)
            std::cerr << "warning: pretraining ended at the S = 0 loss level (" << floor
                      << "); training from this checkpoint may not move\n";
    }
    std::cout << "checkpoint " << cfg.checkpoint << "\n";
    return 0;
}

int run_train(const RunConfig& cfg) {
    const DatasetManifest manifest = read_manifest(cfg.data_dir);
    // Only the train and val splits are read here.
    const SampleSet train_set = load_split(manifest, "train");
    const SampleSet val_set = load_split(manifest, "val");
    Model model = initial_model(cfg);
    std::ofstream out = open_report(cfg.report);
    const TrainReport report = train(model, train_set, val_set, cfg, &out);
    write_config_sidecar(cfg.report, cfg);
    save_checkpoint(cfg.checkpoint, model.net, model.theta);
    std::cout << "train mse " << report.initial_train_mse << " -> " << report.final_train_mse << "\n";
    std::cout << "checkpoint " << cfg.checkpoint << "\n";
    return 0;
}

int run_eval(const RunConfig& cfg) {
    if (!std::filesystem::exists(cfg.checkpoint)) throw IoError("checkpoint not found: " + cfg.checkpoint);
    const Model model = load_checkpoint(cfg.checkpoint);
    const DatasetManifest manifest = read_manifest(cfg.data_dir);
    const GaussianBlur A = make_blur(cfg);
    const TunedBaselines tuned = tune_baselines(A, load_split(manifest, "val"), cfg);
    const EvalResult result = evaluate(model, A, load_split(manifest, "test"), tuned, cfg, cfg.output_dir);
    std::ofstream out = open_report(cfg.report);
    write_eval_csv(out, result);
    write_config_sidecar(cfg.report, cfg);
    std::cout << "tuned: tikhonov lambda " << tuned.tikhonov_lambda << ", tv lambda " << tuned.tv_lambda
              << ", gradient descent steps " << tuned.gd_steps << "\n";
    std::cout << std::left << std::setw(18) << "method" << std::setw(12) << "mse" << std::setw(10) << "psnr"
              << "ssim\n";
    for (const EvalRow& r : result.means)
        std::cout << std::setw(18) << r.method << std::setw(12) << std::setprecision(4) << r.metrics.mse
                  << std::setw(10) << r.metrics.psnr << r.metrics.ssim << "\n";
    return 0;
}

int run_bench_command(const RunConfig& cfg) {
    const std::vector<BenchRow> rows = run_bench(cfg, &std::cout);
    std::ofstream out = open_report(cfg.report);
    write_bench_csv(out, rows);
    write_config_sidecar(cfg.report, cfg);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DE-GRAD implicit network for Gaussian deblurring"};
    app.require_subcommand(1);
    struct Command {
        const char* name;
        const char* help;
        int (*run)(const RunConfig&);
    };
    const Command commands[] = {
        {"generate-data", "build train/val/test pairs from source images or synthetic shapes", generate_data},
        {"pretrain", "pretrain the network as a noise predictor", run_pretrain},
        {"train", "train the implicit network", run_train},
        {"eval", "score DE-GRAD and the baselines on the test split", run_eval},
        {"bench", "time JFB against Jacobian-CG parameter updates", run_bench_command},
    };
    std::vector<Settings> settings(std::size(commands));
    std::vector<CLI::App*> subs;
    for (std::size_t i = 0; i < std::size(commands); ++i) {
        CLI::App* sub = app.add_subcommand(commands[i].name, commands[i].help);
        add_config_flags(sub, settings[i]);
        subs.push_back(sub);
    }
    CLI11_PARSE(app, argc, argv);
    try {
        for (std::size_t i = 0; i < subs.size(); ++i)
            if (subs[i]->parsed()) return commands[i].run(resolve(subs[i], settings[i]));
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
