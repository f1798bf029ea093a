#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>

#include "bsrn/errors.hpp"

namespace bsrn {

template <typename Scalar>
using ArrayX = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Dense rank-3 tensor in (channel, row, column) order, row-major within a
// channel plane. This is the single activation/image container for the whole
// library; channels may be zero (degenerate maps show up when the block-state
// width is ablated to nothing).
template <typename Scalar>
class Tensor3 {
 public:
  Tensor3() = default;

  Tensor3(int channels, int height, int width)
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0)
      throw ShapeError("Tensor3: negative dimension");
    data_ = ArrayX<Scalar>::Zero(static_cast<Eigen::Index>(channels) * height * width);
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  Eigen::Index plane() const { return static_cast<Eigen::Index>(height_) * width_; }
  Eigen::Index size() const { return data_.size(); }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  ArrayX<Scalar>& array() { return data_; }
  const ArrayX<Scalar>& array() const { return data_; }

  Scalar& operator()(int c, int y, int x) { return data_[index(c, y, x)]; }
  Scalar operator()(int c, int y, int x) const { return data_[index(c, y, x)]; }

  Scalar* row_ptr(int c, int y) { return data_.data() + plane() * c + static_cast<Eigen::Index>(y) * width_; }
  const Scalar* row_ptr(int c, int y) const {
    return data_.data() + plane() * c + static_cast<Eigen::Index>(y) * width_;
  }

  Eigen::Map<RowMatrix<Scalar>> channel(int c) {
    return Eigen::Map<RowMatrix<Scalar>>(data_.data() + plane() * c, height_, width_);
  }
  Eigen::Map<const RowMatrix<Scalar>> channel(int c) const {
    return Eigen::Map<const RowMatrix<Scalar>>(data_.data() + plane() * c, height_, width_);
  }

  bool same_shape(const Tensor3& other) const {
    return channels_ == other.channels_ && height_ == other.height_ && width_ == other.width_;
  }

  std::string shape_str() const {
    return "(" + std::to_string(channels_) + ", " + std::to_string(height_) + ", " +
           std::to_string(width_) + ")";
  }

 private:
  Eigen::Index index(int c, int y, int x) const {
    return plane() * c + static_cast<Eigen::Index>(y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  ArrayX<Scalar> data_;
};

template <typename Scalar>
Tensor3<Scalar> zeros_like(const Tensor3<Scalar>& t) {
  return Tensor3<Scalar>(t.channels(), t.height(), t.width());
}

// Activations and images throughout the library are single-precision.
using FeatureMap = Tensor3<float>;

// 3x3 convolution parameters. Weights are stored (ky, kx, in, out) row-major
// so that for a fixed tap and input channel all output channels are
// contiguous; that layout is what the forward kernel streams over.
template <typename Scalar>
struct ConvKernel {
  static constexpr int kTap = 3;

  int in_channels = 0;
  int out_channels = 0;
  ArrayX<Scalar> weights;  // kTap * kTap * in_channels * out_channels
  ArrayX<Scalar> bias;     // out_channels

  ConvKernel() = default;

  ConvKernel(int in, int out) : in_channels(in), out_channels(out) {
    if (in < 0 || out < 1) throw ShapeError("ConvKernel: bad channel counts");
    weights = ArrayX<Scalar>::Zero(static_cast<Eigen::Index>(kTap) * kTap * in * out);
    bias = ArrayX<Scalar>::Zero(out);
  }

  Scalar& w(int ky, int kx, int i, int o) {
    return weights[((static_cast<Eigen::Index>(ky) * kTap + kx) * in_channels + i) * out_channels + o];
  }
  Scalar w(int ky, int kx, int i, int o) const {
    return weights[((static_cast<Eigen::Index>(ky) * kTap + kx) * in_channels + i) * out_channels + o];
  }

  Eigen::Index param_count() const { return weights.size() + bias.size(); }
};

}  // namespace bsrn
