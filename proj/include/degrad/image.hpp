#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace degrad {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Row-major channel plane; one image row per matrix row.
template <typename Scalar>
using PlaneMap = Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename Scalar>
using ConstPlaneMap =
    Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

/// Dense channels x height x width tensor. Storage is channel-major and
/// row-major within a channel, so `vec()` is the flattened image used by all
/// linear-algebra code.
template <typename Scalar>
class Image {
public:
    Image() = default;

    Image(int channels, int height, int width)
        : channels_(channels), height_(height), width_(width),
          data_(VectorX<Scalar>::Zero(checked_size(channels, height, width))) {}

    Image(int channels, int height, int width, VectorX<Scalar> data)
        : channels_(channels), height_(height), width_(width), data_(std::move(data)) {
        if (data_.size() != checked_size(channels, height, width))
            throw std::invalid_argument("image data length does not match its shape");
    }

    static Image constant(int channels, int height, int width, Scalar value) {
        Image img(channels, height, width);
        img.data_.setConstant(value);
        return img;
    }

    /// Zero tensor with the shape of `other`.
    static Image zeros_like(const Image& other) {
        return Image(other.channels_, other.height_, other.width_);
    }

    /// Same shape as this image, new data.
    Image with_data(VectorX<Scalar> data) const {
        return Image(channels_, height_, width_, std::move(data));
    }

    int channels() const { return channels_; }
    int height() const { return height_; }
    int width() const { return width_; }
    Eigen::Index pixels_per_channel() const { return Eigen::Index(height_) * width_; }
    Eigen::Index size() const { return data_.size(); }

    VectorX<Scalar>& vec() { return data_; }
    const VectorX<Scalar>& vec() const { return data_; }

    Scalar& operator()(int c, int i, int j) { return data_[index(c, i, j)]; }
    Scalar operator()(int c, int i, int j) const { return data_[index(c, i, j)]; }

    PlaneMap<Scalar> plane(int c) {
        return PlaneMap<Scalar>(data_.data() + c * pixels_per_channel(), height_, width_);
    }
    ConstPlaneMap<Scalar> plane(int c) const {
        return ConstPlaneMap<Scalar>(data_.data() + c * pixels_per_channel(), height_, width_);
    }

    bool same_shape(const Image& other) const {
        return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
    }

    bool all_finite() const { return data_.allFinite(); }

    template <typename Other>
    Image<Other> cast() const {
        return Image<Other>(channels_, height_, width_, data_.template cast<Other>());
    }

private:
    static Eigen::Index checked_size(int channels, int height, int width) {
        if (channels < 1 || height < 1 || width < 1)
            throw std::invalid_argument("image dimensions must be positive");
        return Eigen::Index(channels) * height * width;
    }

    Eigen::Index index(int c, int i, int j) const {
        return (Eigen::Index(c) * height_ + i) * width_ + j;
    }

    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    VectorX<Scalar> data_;
};

using ImageTensor = Image<double>;

template <typename Scalar>
void require_same_shape(const Image<Scalar>& a, const Image<Scalar>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

template <typename Scalar>
Scalar dot(const Image<Scalar>& a, const Image<Scalar>& b) {
    require_same_shape(a, b, "dot");
    return a.vec().dot(b.vec());
}

/// l2 norm divided by sqrt(element count), so tolerances do not depend on
/// resolution.
template <typename Derived>
typename Derived::Scalar rms_norm(const Eigen::MatrixBase<Derived>& v) {
    using Scalar = typename Derived::Scalar;
    if (v.size() == 0) return Scalar(0);
    return v.norm() / std::sqrt(Scalar(v.size()));
}

} // namespace degrad
