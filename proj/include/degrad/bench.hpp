#pragma once

#include "degrad/config.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace degrad {

struct BenchRow {
    int size = 0;
    std::string scheme;
    double mean_seconds = 0;
    double std_seconds = 0;
    /// False when the cell could not run (allocation failure).
    bool available = true;
    int reps = 0;
    double mean_fp_iters = 0;
    double mean_cg_iters = 0;
};

/// Times one full parameter update (fixed-point solves, gradients, step,
/// spectral normalization) on a batch of synthetic images for JFB and for
/// Jacobian-CG at every size in cfg.bench_sizes. Single-threaded; each timed
/// repetition starts from the same parameters. Progress lines go to `log`.
std::vector<BenchRow> run_bench(const RunConfig& cfg, std::ostream* log = nullptr);

inline constexpr const char* bench_csv_header = "size,scheme,mean_seconds,std_seconds,available,reps,mean_fp_iters,mean_cg_iters";

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

} // namespace degrad
