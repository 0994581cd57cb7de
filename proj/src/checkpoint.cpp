#include "degrad/checkpoint.hpp"

#include "degrad/io.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace degrad {

namespace {

constexpr char magic[8] = {'D', 'G', 'C', 'K', 'P', 'T', '\0', '\0'};

void write_vector(std::ostream& out, const VectorX<double>& v) {
    binary::write_u64(out, std::uint64_t(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) binary::write_f64(out, v[i]);
}

VectorX<double> read_vector(std::istream& in, Eigen::Index expected) {
    const std::uint64_t n = binary::read_u64(in);
    if (n != std::uint64_t(expected)) throw IoError("checkpoint vector length does not match the architecture");
    VectorX<double> v(expected);
    for (Eigen::Index i = 0; i < expected; ++i) v[i] = binary::read_f64(in);
    return v;
}

void write_config(std::ostream& out, const NetConfig& cfg) {
    binary::write_u32(out, std::uint32_t(cfg.n_layers));
    binary::write_u32(out, std::uint32_t(cfg.image_channels));
    binary::write_u32(out, std::uint32_t(cfg.hidden_channels));
    binary::write_u32(out, std::uint32_t(cfg.kernel_size));
    binary::write_f64(out, cfg.contraction_scale);
    binary::write_u32(out, std::uint32_t(cfg.normalization));
    binary::write_u32(out, std::uint32_t(cfg.spectral_grid));
    binary::write_u32(out, std::uint32_t(cfg.init));
    binary::write_f64(out, cfg.identity_gain);
    binary::write_u64(out, cfg.seed);
}

NetConfig read_config(std::istream& in) {
    NetConfig cfg;
    cfg.n_layers = int(binary::read_u32(in));
    cfg.image_channels = int(binary::read_u32(in));
    cfg.hidden_channels = int(binary::read_u32(in));
    cfg.kernel_size = int(binary::read_u32(in));
    cfg.contraction_scale = binary::read_f64(in);
    const std::uint32_t norm = binary::read_u32(in);
    if (norm > std::uint32_t(Normalization::affine)) throw IoError("unknown normalization in checkpoint");
    cfg.normalization = Normalization(norm);
    cfg.spectral_grid = int(binary::read_u32(in));
    const std::uint32_t init = binary::read_u32(in);
    if (init > std::uint32_t(Init::identity_path)) throw IoError("unknown init in checkpoint");
    cfg.init = Init(init);
    cfg.identity_gain = binary::read_f64(in);
    cfg.seed = binary::read_u64(in);
    // Sanity limits before the network allocates anything.
    if (cfg.n_layers > 1024 || cfg.hidden_channels > 4096 || cfg.image_channels > 64 || cfg.kernel_size > 63 ||
        cfg.spectral_grid > 4096)
        throw IoError("implausible network configuration in checkpoint");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw IoError(std::string("invalid network configuration in checkpoint: ") + e.what());
    }
    return cfg;
}

} // namespace

void write_checkpoint(std::ostream& out, const Network<double>& net, const ParamVector<double>& theta) {
    net.require_params(theta);
    out.write(magic, 8);
    binary::write_u32(out, checkpoint_version);
    write_config(out, net.config());
    write_vector(out, theta.data);
    for (std::size_t l = 0; l < net.convs().size(); ++l) {
        write_vector(out, net.right_vectors()[l]);
        write_vector(out, net.left_vectors()[l]);
        binary::write_f64(out, net.sigmas()[l]);
        if (net.convs()[l].normalized) {
            write_vector(out, net.running_means()[l]);
            write_vector(out, net.running_vars()[l]);
        }
    }
}

Model read_checkpoint(std::istream& in) {
    char head[8];
    if (!in.read(head, 8) || std::memcmp(head, magic, 8) != 0) throw IoError("not a checkpoint file");
    const std::uint32_t version = binary::read_u32(in);
    if (version != checkpoint_version)
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    Model m{Network<double>(read_config(in)), {}};
    m.theta = m.net.zero_params();
    m.theta.data = read_vector(in, m.net.param_count());
    const int g = m.net.config().spectral_grid;
    for (std::size_t l = 0; l < m.net.convs().size(); ++l) {
        const ConvSpec& conv = m.net.convs()[l];
        m.net.right_vectors()[l] = read_vector(in, Eigen::Index(conv.in_channels) * g * g);
        m.net.left_vectors()[l] = read_vector(in, Eigen::Index(conv.out_channels) * g * g);
        m.net.sigmas()[l] = binary::read_f64(in);
        if (conv.normalized) {
            m.net.running_means()[l] = read_vector(in, conv.out_channels);
            m.net.running_vars()[l] = read_vector(in, conv.out_channels);
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes after checkpoint");
    return m;
}

void save_checkpoint(const std::string& path, const Network<double>& net, const ParamVector<double>& theta) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    write_checkpoint(out, net, theta);
    if (!out) throw IoError("failed writing " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    return read_checkpoint(in);
}

} // namespace degrad
