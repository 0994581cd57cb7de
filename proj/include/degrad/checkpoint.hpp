#pragma once

#include "degrad/network.hpp"

#include <iosfwd>
#include <string>

namespace degrad {

/// A network (architecture plus persistent power-iteration and normalization
/// state) together with its parameters.
struct Model {
    Network<double> net;
    ParamVector<double> theta;
};

inline constexpr std::uint32_t checkpoint_version = 1;

/// Binary, little-endian, versioned. Every double is stored by its bit
/// pattern, so write -> read -> write reproduces the bytes exactly.
void write_checkpoint(std::ostream& out, const Network<double>& net, const ParamVector<double>& theta);
Model read_checkpoint(std::istream& in);

void save_checkpoint(const std::string& path, const Network<double>& net, const ParamVector<double>& theta);
Model load_checkpoint(const std::string& path);

} // namespace degrad
