#pragma once

#include "degrad/counters.hpp"
#include "degrad/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace degrad {

enum class Normalization {
    none,
    /// Per-channel learned scale and shift applied to pre-activations that
    /// were standardized with statistics frozen between training steps.
    affine,
};

enum class Init {
    /// Weights uniform in [-a, a], a = sqrt(1 / fan_in).
    uniform,
    /// Uniform weights scaled by identity_gain plus a signal path through the
    /// centre taps: layer 0 splits each image channel c into hidden channels
    /// 2c (+x) and 2c+1 (-x), hidden layers copy them, and the last layer
    /// recombines them, so the stack starts out as a scaled identity instead
    /// of a map whose output has vanished after 17 layers.
    identity_path,
};

struct NetConfig {
    int n_layers = 17;
    int image_channels = 1;
    int hidden_channels = 16;
    int kernel_size = 3;
    double contraction_scale = 0.9;
    Normalization normalization = Normalization::none;
    /// Side of the square grid the per-layer power iteration runs on.
    int spectral_grid = 16;
    Init init = Init::identity_path;
    double identity_gain = 0.1;
    std::uint64_t seed = 0;

    void validate() const {
        if (n_layers < 2) throw std::invalid_argument("network needs at least two layers");
        if (image_channels < 1 || hidden_channels < 1)
            throw std::invalid_argument("channel counts must be positive");
        if (kernel_size < 1 || kernel_size % 2 == 0)
            throw std::invalid_argument("network kernel size must be odd");
        if (!(contraction_scale > 0.0 && contraction_scale <= 1.0))
            throw std::invalid_argument("contraction_scale must lie in (0, 1]");
        if (spectral_grid < 1) throw std::invalid_argument("spectral_grid must be positive");
        if (init == Init::identity_path && hidden_channels < 2 * image_channels)
            throw std::invalid_argument("identity_path init needs at least two hidden channels per image channel");
        if (!(identity_gain >= 0)) throw std::invalid_argument("identity_gain must be nonnegative");
    }

    /// 128x128 RGB with 64 hidden channels.
    static NetConfig full_scale() {
        NetConfig cfg;
        cfg.image_channels = 3;
        cfg.hidden_channels = 64;
        cfg.normalization = Normalization::affine;
        return cfg;
    }
};

struct LayerSlot {
    std::string name;
    std::vector<int> shape;
    Eigen::Index offset = 0;
    Eigen::Index size = 0;
};

/// Flat view of every trainable weight together with its layout.
template <typename Scalar>
struct ParamVector {
    VectorX<Scalar> data;
    std::vector<LayerSlot> layout;

    Eigen::Index size() const { return data.size(); }

    auto segment(const LayerSlot& slot) { return data.segment(slot.offset, slot.size); }
    auto segment(const LayerSlot& slot) const { return data.segment(slot.offset, slot.size); }

    ParamVector zeros_like() const { return {VectorX<Scalar>::Zero(data.size()), layout}; }

    bool all_finite() const { return data.allFinite(); }
};

/// Static description of one convolution in the stack.
struct ConvSpec {
    int in_channels = 0;
    int out_channels = 0;
    bool relu = false;
    bool normalized = false;
    // Indices into ParamVector::layout; -1 when absent.
    int weight_slot = -1;
    int bias_slot = -1;
    int scale_slot = -1;
    int shift_slot = -1;
};

namespace detail {

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Zero-padded "same" patch extraction: row (c, a, b) holds channel c shifted by
// tap (a, b), one column per output pixel.
template <typename Scalar>
RowMatrix<Scalar> im2col(const RowMatrix<Scalar>& act, int height, int width, int k) {
    const int r = k / 2;
    const Eigen::Index channels = act.rows();
    RowMatrix<Scalar> cols = RowMatrix<Scalar>::Zero(channels * k * k, Eigen::Index(height) * width);
    for (Eigen::Index c = 0; c < channels; ++c) {
        const Scalar* src = act.row(c).data();
        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
                Scalar* dst = cols.row((c * k + a) * k + b).data();
                const int di = a - r, dj = b - r;
                const int j0 = std::max(0, -dj), j1 = std::min(width, width - dj);
                for (int i = 0; i < height; ++i) {
                    const int si = i + di;
                    if (si < 0 || si >= height) continue;
                    const Scalar* srow = src + Eigen::Index(si) * width + dj;
                    Scalar* drow = dst + Eigen::Index(i) * width;
                    for (int j = j0; j < j1; ++j) drow[j] = srow[j];
                }
            }
        }
    }
    return cols;
}

// Adjoint of im2col: scatter-add patches back onto the image.
template <typename Scalar>
RowMatrix<Scalar> col2im(const RowMatrix<Scalar>& cols, int channels, int height, int width, int k) {
    const int r = k / 2;
    RowMatrix<Scalar> act = RowMatrix<Scalar>::Zero(channels, Eigen::Index(height) * width);
    for (int c = 0; c < channels; ++c) {
        Scalar* dst = act.row(c).data();
        for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
                const Scalar* src = cols.row((Eigen::Index(c) * k + a) * k + b).data();
                const int di = a - r, dj = b - r;
                const int j0 = std::max(0, -dj), j1 = std::min(width, width - dj);
                for (int i = 0; i < height; ++i) {
                    const int si = i + di;
                    if (si < 0 || si >= height) continue;
                    Scalar* drow = dst + Eigen::Index(si) * width + dj;
                    const Scalar* srow = src + Eigen::Index(i) * width;
                    for (int j = j0; j < j1; ++j) drow[j] += srow[j];
                }
            }
        }
    }
    return act;
}

} // namespace detail

/// The learned term S of the fixed-point map: a plain stack of zero-padded
/// convolutions, ReLU after every layer but the last, optional per-channel
/// affine normalization on the hidden layers, and a constant output scale.
///
/// Parameters live outside the network in a ParamVector; the network itself
/// only owns the architecture, the persistent power-iteration vectors and the
/// frozen normalization statistics.
template <typename Scalar>
class Network {
public:
    static constexpr Scalar norm_epsilon = Scalar(1e-5);

    explicit Network(NetConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.validate();
        build_layout();
        reset_state();
    }

    const NetConfig& config() const { return cfg_; }
    const std::vector<ConvSpec>& convs() const { return convs_; }
    const std::vector<LayerSlot>& layout() const { return layout_; }
    Eigen::Index param_count() const { return param_count_; }

    ParamVector<Scalar> zero_params() const { return {VectorX<Scalar>::Zero(param_count_), layout_}; }

    /// Zero biases, unit normalization scales and weights per config().init.
    /// Deterministic in config().seed.
    ParamVector<Scalar> init_params() const {
        ParamVector<Scalar> theta = zero_params();
        std::mt19937_64 rng(cfg_.seed);
        const int k = cfg_.kernel_size, k2 = k * k;
        const bool path = cfg_.init == Init::identity_path;
        const double gain = path ? cfg_.identity_gain : 1.0;
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            const ConvSpec& conv = convs_[l];
            const LayerSlot& w = layout_[conv.weight_slot];
            const double bound = std::sqrt(1.0 / double(conv.in_channels * k2));
            std::uniform_real_distribution<double> uniform(-bound, bound);
            for (Eigen::Index i = 0; i < w.size; ++i) theta.data[w.offset + i] = Scalar(gain * uniform(rng));
            if (conv.normalized) theta.segment(layout_[conv.scale_slot]).setOnes();
            if (!path) continue;
            auto centre = [&](int out, int in) -> Scalar& {
                return theta.data[w.offset + ((Eigen::Index(out) * conv.in_channels + in) * k + k / 2) * k + k / 2];
            };
            for (int c = 0; c < cfg_.image_channels; ++c) {
                if (l == 0) {
                    centre(2 * c, c) = 1;
                    centre(2 * c + 1, c) = -1;
                } else if (l + 1 == convs_.size()) {
                    centre(c, 2 * c) = 1;
                    centre(c, 2 * c + 1) = -1;
                } else {
                    centre(2 * c, 2 * c) = 1;
                    centre(2 * c + 1, 2 * c + 1) = 1;
                }
            }
        }
        return theta;
    }

    void require_params(const ParamVector<Scalar>& theta) const {
        if (theta.size() != param_count_)
            throw std::invalid_argument("parameter vector length does not match the network layout");
    }

    void require_input(const Image<Scalar>& x) const {
        if (x.channels() != cfg_.image_channels)
            throw std::invalid_argument("input channels do not match the network");
    }

    // Persistent state. Exposed for checkpointing.
    std::vector<VectorX<Scalar>>& right_vectors() { return right_; }
    const std::vector<VectorX<Scalar>>& right_vectors() const { return right_; }
    std::vector<VectorX<Scalar>>& left_vectors() { return left_; }
    const std::vector<VectorX<Scalar>>& left_vectors() const { return left_; }
    std::vector<Scalar>& sigmas() { return sigma_; }
    const std::vector<Scalar>& sigmas() const { return sigma_; }
    std::vector<VectorX<Scalar>>& running_means() { return mean_; }
    const std::vector<VectorX<Scalar>>& running_means() const { return mean_; }
    std::vector<VectorX<Scalar>>& running_vars() { return var_; }
    const std::vector<VectorX<Scalar>>& running_vars() const { return var_; }

    /// Per-channel affine coefficients (gain, offset) of a normalized layer.
    void affine_coefficients(const ParamVector<Scalar>& theta, int layer, VectorX<Scalar>& gain,
                             VectorX<Scalar>& offset) const {
        const ConvSpec& conv = convs_[layer];
        const auto gamma = theta.segment(layout_[conv.scale_slot]);
        const auto beta = theta.segment(layout_[conv.shift_slot]);
        const VectorX<Scalar> inv_std = (var_[layer].array() + norm_epsilon).rsqrt().matrix();
        gain = gamma.cwiseProduct(inv_std);
        offset = beta - gain.cwiseProduct(mean_[layer]);
    }

    void reset_state() {
        const int g = cfg_.spectral_grid;
        std::mt19937_64 rng(cfg_.seed ^ 0x9e3779b97f4a7c15ULL);
        std::normal_distribution<double> normal;
        right_.assign(convs_.size(), {});
        left_.assign(convs_.size(), {});
        sigma_.assign(convs_.size(), Scalar(0));
        mean_.assign(convs_.size(), {});
        var_.assign(convs_.size(), {});
        for (std::size_t l = 0; l < convs_.size(); ++l) {
            right_[l].resize(Eigen::Index(convs_[l].in_channels) * g * g);
            for (Eigen::Index i = 0; i < right_[l].size(); ++i) right_[l][i] = Scalar(normal(rng));
            right_[l].normalize();
            left_[l] = VectorX<Scalar>::Zero(Eigen::Index(convs_[l].out_channels) * g * g);
            if (convs_[l].normalized) {
                mean_[l] = VectorX<Scalar>::Zero(convs_[l].out_channels);
                var_[l] = VectorX<Scalar>::Ones(convs_[l].out_channels);
            }
        }
    }

private:
    void build_layout() {
        const int L = cfg_.n_layers, k = cfg_.kernel_size;
        Eigen::Index offset = 0;
        auto add = [&](std::string name, std::vector<int> shape) {
            Eigen::Index n = 1;
            for (int s : shape) n *= s;
            layout_.push_back({std::move(name), std::move(shape), offset, n});
            offset += n;
            return int(layout_.size()) - 1;
        };
        for (int l = 0; l < L; ++l) {
            ConvSpec conv;
            conv.in_channels = l == 0 ? cfg_.image_channels : cfg_.hidden_channels;
            conv.out_channels = l == L - 1 ? cfg_.image_channels : cfg_.hidden_channels;
            conv.relu = l < L - 1;
            conv.normalized = cfg_.normalization == Normalization::affine && l > 0 && l < L - 1;
            const std::string id = std::to_string(l);
            conv.weight_slot = add("conv" + id + ".weight", {conv.out_channels, conv.in_channels, k, k});
            conv.bias_slot = add("conv" + id + ".bias", {conv.out_channels});
            if (conv.normalized) {
                conv.scale_slot = add("norm" + id + ".scale", {conv.out_channels});
                conv.shift_slot = add("norm" + id + ".shift", {conv.out_channels});
            }
            convs_.push_back(conv);
        }
        param_count_ = offset;
    }

    NetConfig cfg_;
    std::vector<ConvSpec> convs_;
    std::vector<LayerSlot> layout_;
    Eigen::Index param_count_ = 0;

    std::vector<VectorX<Scalar>> right_;
    std::vector<VectorX<Scalar>> left_;
    std::vector<Scalar> sigma_;
    std::vector<VectorX<Scalar>> mean_;
    std::vector<VectorX<Scalar>> var_;
};

namespace detail {

template <typename Scalar>
using ConstWeightMap = Eigen::Map<const RowMatrix<Scalar>>;

template <typename Scalar>
ConstWeightMap<Scalar> weight_matrix(const Network<Scalar>& net, const ParamVector<Scalar>& theta,
                                     int layer) {
    const ConvSpec& conv = net.convs()[layer];
    const LayerSlot& slot = net.layout()[conv.weight_slot];
    const int k = net.config().kernel_size;
    return ConstWeightMap<Scalar>(theta.data.data() + slot.offset, conv.out_channels,
                                  Eigen::Index(conv.in_channels) * k * k);
}

// Bias-free convolution of a channels x pixels activation.
template <typename Scalar>
RowMatrix<Scalar> conv_linear(const Network<Scalar>& net, const ParamVector<Scalar>& theta, int layer,
                              const RowMatrix<Scalar>& act, int height, int width) {
    const RowMatrix<Scalar> cols = im2col(act, height, width, net.config().kernel_size);
    RowMatrix<Scalar> out(net.convs()[layer].out_channels, act.cols());
    out.noalias() = weight_matrix(net, theta, layer) * cols;
    return out;
}

// Adjoint of conv_linear.
template <typename Scalar>
RowMatrix<Scalar> conv_linear_adjoint(const Network<Scalar>& net, const ParamVector<Scalar>& theta,
                                      int layer, const RowMatrix<Scalar>& grad, int height, int width) {
    RowMatrix<Scalar> cols(weight_matrix(net, theta, layer).cols(), grad.cols());
    cols.noalias() = weight_matrix(net, theta, layer).transpose() * grad;
    return col2im(cols, net.convs()[layer].in_channels, height, width, net.config().kernel_size);
}

template <typename Scalar>
RowMatrix<Scalar> as_activation(const Image<Scalar>& x) {
    return Eigen::Map<const RowMatrix<Scalar>>(x.vec().data(), x.channels(), x.pixels_per_channel());
}

template <typename Scalar>
Image<Scalar> as_image(const RowMatrix<Scalar>& act, int height, int width) {
    return Image<Scalar>(int(act.rows()), height, width,
                         Eigen::Map<const VectorX<Scalar>>(act.data(), act.size()));
}

template <typename Scalar>
void require_shape(const Network<Scalar>& net, const ParamVector<Scalar>& theta, const Image<Scalar>& x,
                   const Image<Scalar>* v) {
    net.require_params(theta);
    net.require_input(x);
    if (v && !x.same_shape(*v)) throw std::invalid_argument("cotangent/tangent shape does not match input");
}

} // namespace detail

/// Network evaluation with everything needed for exact derivatives at one
/// input cached: per-layer inputs, pre-normalization values and ReLU masks.
/// Build once at a point, then apply any number of JVPs/VJPs there.
template <typename Scalar>
class Linearization {
public:
    using RowMatrix = detail::RowMatrix<Scalar>;

    Linearization(const Network<Scalar>& net, const ParamVector<Scalar>& theta, const Image<Scalar>& x)
        : net_(&net), theta_(&theta), height_(x.height()), width_(x.width()) {
        detail::require_shape<Scalar>(net, theta, x, nullptr);
        const auto& convs = net.convs();
        const std::size_t L = convs.size();
        inputs_.resize(L);
        pre_norm_.resize(L);
        masks_.resize(L);
        gains_.resize(L);
        RowMatrix act = detail::as_activation(x);
        for (std::size_t l = 0; l < L; ++l) {
            const ConvSpec& conv = convs[l];
            RowMatrix z = detail::conv_linear(net, theta, int(l), act, height_, width_);
            z.colwise() += theta.segment(net.layout()[conv.bias_slot]);
            inputs_[l] = std::move(act);
            if (conv.normalized) {
                VectorX<Scalar> offset;
                net.affine_coefficients(theta, int(l), gains_[l], offset);
                pre_norm_[l] = z;
                z = (z.array().colwise() * gains_[l].array()).colwise() + offset.array();
            }
            if (conv.relu) {
                masks_[l] = (z.array() > Scalar(0)).template cast<Scalar>();
                if (z.size() > 0) kink_distance_ = std::min(kink_distance_, z.cwiseAbs().minCoeff());
                z = z.cwiseProduct(masks_[l]);
            }
            act = std::move(z);
        }
        output_ = detail::as_image<Scalar>(act * Scalar(net.config().contraction_scale), height_, width_);
    }

    const Image<Scalar>& output() const { return output_; }

    /// Smallest |pre-activation| over all ReLU units: how far x is from a
    /// point where S stops being differentiable.
    Scalar kink_distance() const { return kink_distance_; }

    /// (dS/dx) u, forward mode.
    Image<Scalar> jvp(const Image<Scalar>& u) const {
        require_like(u);
        RowMatrix t = detail::as_activation(u);
        for (std::size_t l = 0; l < net_->convs().size(); ++l) {
            const ConvSpec& conv = net_->convs()[l];
            t = detail::conv_linear(*net_, *theta_, int(l), t, height_, width_);
            if (conv.normalized) t = t.array().colwise() * gains_[l].array();
            if (conv.relu) t = t.cwiseProduct(masks_[l]);
        }
        t *= Scalar(net_->config().contraction_scale);
        return detail::as_image<Scalar>(t, height_, width_);
    }

    /// v^T (dS/dx), reverse mode.
    Image<Scalar> vjp_input(const Image<Scalar>& v) const {
        require_like(v);
        return detail::as_image<Scalar>(backward(v, nullptr), height_, width_);
    }

    /// v^T (dS/dtheta).
    ParamVector<Scalar> vjp_params(const Image<Scalar>& v) const {
        require_like(v);
        ++op_counters().vjp_params;
        ParamVector<Scalar> grad = theta_->zeros_like();
        backward(v, &grad);
        return grad;
    }

private:
    void require_like(const Image<Scalar>& v) const {
        if (v.channels() != net_->config().image_channels || v.height() != height_ || v.width() != width_)
            throw std::invalid_argument("vector shape does not match the linearization point");
    }

    RowMatrix backward(const Image<Scalar>& v, ParamVector<Scalar>* grad) const {
        const auto& convs = net_->convs();
        const auto& layout = net_->layout();
        const int k = net_->config().kernel_size;
        RowMatrix g = detail::as_activation(v) * Scalar(net_->config().contraction_scale);
        for (std::size_t idx = convs.size(); idx-- > 0;) {
            const int l = int(idx);
            const ConvSpec& conv = convs[idx];
            if (conv.relu) g = g.cwiseProduct(masks_[idx]);
            if (conv.normalized) {
                if (grad) {
                    const auto& mean = net_->running_means()[idx];
                    const VectorX<Scalar> inv_std =
                        (net_->running_vars()[idx].array() + Network<Scalar>::norm_epsilon).rsqrt().matrix();
                    const RowMatrix standardized =
                        (pre_norm_[idx].array().colwise() - mean.array()).colwise() * inv_std.array();
                    grad->segment(layout[conv.scale_slot]) = g.cwiseProduct(standardized).rowwise().sum();
                    grad->segment(layout[conv.shift_slot]) = g.rowwise().sum();
                }
                g = g.array().colwise() * gains_[idx].array();
            }
            if (grad) {
                const RowMatrix cols = detail::im2col(inputs_[idx], height_, width_, k);
                const LayerSlot& w = layout[conv.weight_slot];
                Eigen::Map<RowMatrix> dW(grad->data.data() + w.offset, conv.out_channels, cols.rows());
                dW.noalias() = g * cols.transpose();
                grad->segment(layout[conv.bias_slot]) = g.rowwise().sum();
            }
            if (l == 0 && grad) break;
            g = detail::conv_linear_adjoint(*net_, *theta_, l, g, height_, width_);
        }
        return g;
    }

    const Network<Scalar>* net_;
    const ParamVector<Scalar>* theta_;
    int height_;
    int width_;
    std::vector<RowMatrix> inputs_;
    std::vector<RowMatrix> pre_norm_;
    std::vector<RowMatrix> masks_;
    std::vector<VectorX<Scalar>> gains_;
    Image<Scalar> output_;
    Scalar kink_distance_ = std::numeric_limits<Scalar>::infinity();
};

/// S(x) = contraction_scale * CNN(x). Deterministic; no state is touched.
template <typename Scalar>
Image<Scalar> forward(const Network<Scalar>& net, const ParamVector<Scalar>& theta, const Image<Scalar>& x) {
    using RowMatrix = detail::RowMatrix<Scalar>;
    detail::require_shape<Scalar>(net, theta, x, nullptr);
    const int h = x.height(), w = x.width();
    RowMatrix act = detail::as_activation(x);
    for (std::size_t l = 0; l < net.convs().size(); ++l) {
        const ConvSpec& conv = net.convs()[l];
        RowMatrix z = detail::conv_linear(net, theta, int(l), act, h, w);
        z.colwise() += theta.segment(net.layout()[conv.bias_slot]);
        if (conv.normalized) {
            VectorX<Scalar> gain, offset;
            net.affine_coefficients(theta, int(l), gain, offset);
            z = (z.array().colwise() * gain.array()).colwise() + offset.array();
        }
        if (conv.relu) z = z.cwiseMax(Scalar(0));
        act = std::move(z);
    }
    act *= Scalar(net.config().contraction_scale);
    return detail::as_image<Scalar>(act, h, w);
}

template <typename Scalar>
Image<Scalar> vjp_input(const Network<Scalar>& net, const ParamVector<Scalar>& theta, const Image<Scalar>& x,
                        const Image<Scalar>& v) {
    detail::require_shape(net, theta, x, &v);
    return Linearization<Scalar>(net, theta, x).vjp_input(v);
}

template <typename Scalar>
ParamVector<Scalar> vjp_params(const Network<Scalar>& net, const ParamVector<Scalar>& theta,
                               const Image<Scalar>& x, const Image<Scalar>& v) {
    detail::require_shape(net, theta, x, &v);
    return Linearization<Scalar>(net, theta, x).vjp_params(v);
}

template <typename Scalar>
Image<Scalar> jvp_input(const Network<Scalar>& net, const ParamVector<Scalar>& theta, const Image<Scalar>& x,
                        const Image<Scalar>& u) {
    detail::require_shape(net, theta, x, &u);
    return Linearization<Scalar>(net, theta, x).jvp(u);
}

namespace detail {

// One power step on W^T W for a layer's bias-free convolution over the
// spectral grid. Returns ||W v|| for the normalized v it leaves behind.
template <typename Scalar>
Scalar power_iterate(const Network<Scalar>& net, const ParamVector<Scalar>& theta, int layer,
                     VectorX<Scalar>& right, VectorX<Scalar>& left, int iters) {
    const int g = net.config().spectral_grid;
    const ConvSpec& conv = net.convs()[layer];
    auto apply = [&](const VectorX<Scalar>& v) {
        RowMatrix<Scalar> act = Eigen::Map<const RowMatrix<Scalar>>(v.data(), conv.in_channels, g * g);
        return conv_linear(net, theta, layer, act, g, g);
    };
    for (int it = 0; it < iters; ++it) {
        RowMatrix<Scalar> wv = apply(right);
        RowMatrix<Scalar> back = conv_linear_adjoint(net, theta, layer, wv, g, g);
        VectorX<Scalar> next = Eigen::Map<const VectorX<Scalar>>(back.data(), back.size());
        const Scalar n = next.norm();
        if (n == Scalar(0)) break;
        right = next / n;
    }
    RowMatrix<Scalar> wv = apply(right);
    const Scalar sigma = wv.norm();
    left = Eigen::Map<const VectorX<Scalar>>(wv.data(), wv.size());
    if (sigma > Scalar(0)) left /= sigma;
    return sigma;
}

} // namespace detail

/// Divides each convolution by its power-iteration operator-norm estimate when
/// that estimate exceeds 1, and caps every affine channel gain at 1. The
/// estimate runs on the convolution operator over a spectral_grid^2 input and
/// warm-starts from the vectors stored in the network, which are updated.
template <typename Scalar>
ParamVector<Scalar> normalize_spectral(Network<Scalar>& net, const ParamVector<Scalar>& theta,
                                       int power_iters) {
    if (power_iters < 1) throw std::invalid_argument("normalize_spectral needs at least one iteration");
    net.require_params(theta);
    ParamVector<Scalar> out = theta;
    for (std::size_t l = 0; l < net.convs().size(); ++l) {
        const ConvSpec& conv = net.convs()[l];
        const Scalar sigma = detail::power_iterate(net, out, int(l), net.right_vectors()[l],
                                                   net.left_vectors()[l], power_iters);
        net.sigmas()[l] = sigma;
        if (sigma > Scalar(1)) out.segment(net.layout()[conv.weight_slot]) /= sigma;
        if (conv.normalized) {
            VectorX<Scalar> gain, offset;
            net.affine_coefficients(out, int(l), gain, offset);
            auto gamma = out.segment(net.layout()[conv.scale_slot]);
            for (Eigen::Index c = 0; c < gamma.size(); ++c)
                if (std::abs(gain[c]) > Scalar(1)) gamma[c] /= std::abs(gain[c]);
        }
    }
    return out;
}

/// Per-layer operator-norm estimates without touching the stored state.
template <typename Scalar>
std::vector<Scalar> layer_norm_estimates(const Network<Scalar>& net, const ParamVector<Scalar>& theta,
                                         int power_iters) {
    net.require_params(theta);
    std::vector<Scalar> out;
    for (std::size_t l = 0; l < net.convs().size(); ++l) {
        VectorX<Scalar> right = net.right_vectors()[l], left;
        out.push_back(detail::power_iterate(net, theta, int(l), right, left, power_iters));
    }
    return out;
}

/// Upper estimate of Lip(S): contraction_scale times the product of the
/// per-layer convolution norms and the largest affine channel gains.
template <typename Scalar>
Scalar lipschitz_estimate(const Network<Scalar>& net, const ParamVector<Scalar>& theta, int power_iters = 20) {
    Scalar lip = Scalar(net.config().contraction_scale);
    const std::vector<Scalar> norms = layer_norm_estimates(net, theta, power_iters);
    for (std::size_t l = 0; l < norms.size(); ++l) {
        lip *= norms[l];
        if (net.convs()[l].normalized) {
            VectorX<Scalar> gain, offset;
            net.affine_coefficients(theta, int(l), gain, offset);
            lip *= gain.cwiseAbs().maxCoeff();
        }
    }
    return lip;
}

/// Refreshes the frozen normalization statistics from a batch with an
/// exponential moving average. No-op without affine normalization.
template <typename Scalar>
void update_normalization_stats(Network<Scalar>& net, const ParamVector<Scalar>& theta,
                                const std::vector<Image<Scalar>>& batch, Scalar momentum = Scalar(0.1)) {
    using RowMatrix = detail::RowMatrix<Scalar>;
    if (net.config().normalization != Normalization::affine || batch.empty()) return;
    const std::size_t L = net.convs().size();
    std::vector<VectorX<Scalar>> sum(L), sum_sq(L);
    double count = 0;
    for (const Image<Scalar>& x : batch) {
        detail::require_shape<Scalar>(net, theta, x, nullptr);
        RowMatrix act = detail::as_activation(x);
        count += double(x.pixels_per_channel());
        for (std::size_t l = 0; l < L; ++l) {
            const ConvSpec& conv = net.convs()[l];
            RowMatrix z = detail::conv_linear(net, theta, int(l), act, x.height(), x.width());
            z.colwise() += theta.segment(net.layout()[conv.bias_slot]);
            if (conv.normalized) {
                if (sum[l].size() == 0) {
                    sum[l] = VectorX<Scalar>::Zero(z.rows());
                    sum_sq[l] = VectorX<Scalar>::Zero(z.rows());
                }
                sum[l] += z.rowwise().sum();
                sum_sq[l] += z.cwiseAbs2().rowwise().sum();
                VectorX<Scalar> gain, offset;
                net.affine_coefficients(theta, int(l), gain, offset);
                z = (z.array().colwise() * gain.array()).colwise() + offset.array();
            }
            if (conv.relu) z = z.cwiseMax(Scalar(0));
            act = std::move(z);
        }
    }
    for (std::size_t l = 0; l < L; ++l) {
        if (!net.convs()[l].normalized) continue;
        const VectorX<Scalar> mean = sum[l] / Scalar(count);
        const VectorX<Scalar> var = (sum_sq[l] / Scalar(count) - mean.cwiseAbs2()).cwiseMax(Scalar(0));
        net.running_means()[l] = (Scalar(1) - momentum) * net.running_means()[l] + momentum * mean;
        net.running_vars()[l] = (Scalar(1) - momentum) * net.running_vars()[l] + momentum * var;
    }
}

} // namespace degrad
