#pragma once

#include <atomic>
#include <cstdint>

namespace degrad {

/// Process-wide call counters for the expensive derivative primitives. Used to
/// check structural cost claims (e.g. one parameter VJP per JFB gradient).
struct OpCounters {
    std::atomic<std::int64_t> vjp_params{0};
    std::atomic<std::int64_t> t_vjp_x{0};
    std::atomic<std::int64_t> t_jvp_x{0};

    void reset() {
        vjp_params = 0;
        t_vjp_x = 0;
        t_jvp_x = 0;
    }
};

inline OpCounters& op_counters() {
    static OpCounters counters;
    return counters;
}

} // namespace degrad
