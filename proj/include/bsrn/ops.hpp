#pragma once

#include <algorithm>
#include <utility>

#include "bsrn/tensor.hpp"

namespace bsrn {

namespace detail {

// Unrolls the 3x3 tap neighbourhoods of input rows [y0, y1) into the leading
// columns of `patches`: one column per output pixel, one row per tap/input
// channel pair, rows ordered to match ConvKernel's weight layout. Taps that
// fall outside the image are zero-filled.
template <typename Scalar>
void unroll_taps(const Tensor3<Scalar>& input, int y0, int y1, RowMatrix<Scalar>& patches) {
  const int h = input.height();
  const int w = input.width();
  const Eigen::Index stride = patches.cols();
  Eigen::Index k = 0;
  for (int ky = 0; ky < 3; ++ky) {
    for (int kx = 0; kx < 3; ++kx) {
      for (int i = 0; i < input.channels(); ++i, ++k) {
        Scalar* dst = patches.data() + k * stride;
        for (int y = y0; y < y1; ++y, dst += w) {
          const int iy = y + ky - 1;
          if (iy < 0 || iy >= h) {
            std::fill_n(dst, w, Scalar(0));
            continue;
          }
          const Scalar* src = input.row_ptr(i, iy);
          if (kx == 0) {
            dst[0] = Scalar(0);
            std::copy_n(src, w - 1, dst + 1);
          } else if (kx == 2) {
            std::copy_n(src + 1, w - 1, dst);
            dst[w - 1] = Scalar(0);
          } else {
            std::copy_n(src, w, dst);
          }
        }
      }
    }
  }
}

// Rows per block, sized so the unrolled patch matrix stays around 2 MB and
// cache-resident while still amortizing the matrix-product setup.
inline int conv_row_block(int h, int w, int ci) {
  const Eigen::Index budget = Eigen::Index(1) << 19;
  const Eigen::Index per_row = Eigen::Index(9) * std::max(ci, 1) * w;
  return static_cast<int>(std::clamp<Eigen::Index>(budget / per_row, 1, h));
}

}  // namespace detail

// 3x3 same convolution with zero padding.
//
// Implemented as a blocked patch unroll feeding one matrix product per row
// block, which is where nearly all training time goes. The reduction order is
// fixed by the block sizes and Eigen's product kernels, so results are
// bit-reproducible for a fixed binary (not across compilers or Eigen
// versions, which is also true of the compiler-contracted multiply-adds
// everywhere else).
template <typename Scalar>
Tensor3<Scalar> conv2d_forward(const Tensor3<Scalar>& input, const ConvKernel<Scalar>& kernel) {
  if (input.channels() != kernel.in_channels)
    throw ShapeError("conv2d_forward: input has " + std::to_string(input.channels()) +
                     " channels, kernel expects " + std::to_string(kernel.in_channels));
  if (input.height() < 1 || input.width() < 1)
    throw ShapeError("conv2d_forward: empty spatial dims " + input.shape_str());

  const int h = input.height();
  const int w = input.width();
  const int ci = kernel.in_channels;
  const int co = kernel.out_channels;
  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;

  Tensor3<Scalar> out(co, h, w);
  const int block = detail::conv_row_block(h, w, ci);
  RowMatrix<Scalar> patches(Eigen::Index(9) * ci, static_cast<Eigen::Index>(block) * w);

  Eigen::Map<const RowMatrix<Scalar>> wm(kernel.weights.data(), Eigen::Index(9) * ci, co);
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> bias(kernel.bias.data(), co);

  for (int y0 = 0; y0 < h; y0 += block) {
    const int y1 = std::min(h, y0 + block);
    const Eigen::Index n = static_cast<Eigen::Index>(y1 - y0) * w;
    detail::unroll_taps(input, y0, y1, patches);
    // Channel planes are contiguous, so rows [y0, y1) of every output channel
    // form one strided co-by-n matrix the product can write into directly.
    Eigen::Map<RowMatrix<Scalar>, 0, Eigen::OuterStride<>> om(
        out.data() + static_cast<Eigen::Index>(y0) * w, co, n, Eigen::OuterStride<>(plane));
    om.colwise() = bias;
    om.noalias() += wm.transpose() * patches.leftCols(n);
  }
  return out;
}

template <typename Scalar>
struct ConvGrads {
  Tensor3<Scalar> input;
  ConvKernel<Scalar> kernel;
};

// Gradients of conv2d_forward with respect to its input, weights and bias,
// given the gradient of the loss with respect to its output.
//
// d/dinput is itself a same convolution of grad_output with the spatially
// rotated, channel-transposed kernel; d/dweights is the valid-overlap
// correlation of input with grad_output, computed from the same patch unroll
// as the forward pass; d/dbias sums grad_output per output channel. All
// reductions run in a fixed blocked order, so repeated calls are bitwise
// identical.
template <typename Scalar>
ConvGrads<Scalar> conv2d_backward(const Tensor3<Scalar>& input, const ConvKernel<Scalar>& kernel,
                                  const Tensor3<Scalar>& grad_output) {
  if (input.channels() != kernel.in_channels)
    throw ShapeError("conv2d_backward: input/kernel channel mismatch");
  if (grad_output.channels() != kernel.out_channels)
    throw ShapeError("conv2d_backward: grad_output has " + std::to_string(grad_output.channels()) +
                     " channels, kernel produces " + std::to_string(kernel.out_channels));
  if (grad_output.height() != input.height() || grad_output.width() != input.width())
    throw ShapeError("conv2d_backward: grad_output " + grad_output.shape_str() +
                     " does not match input " + input.shape_str());

  const int h = input.height();
  const int w = input.width();
  const int ci = kernel.in_channels;
  const int co = kernel.out_channels;

  ConvGrads<Scalar> grads;
  grads.kernel = ConvKernel<Scalar>(ci, co);

  for (int o = 0; o < co; ++o) grads.kernel.bias[o] = grad_output.channel(o).sum();

  ConvKernel<Scalar> rotated(co, ci);
  for (int ky = 0; ky < 3; ++ky)
    for (int kx = 0; kx < 3; ++kx)
      for (int i = 0; i < ci; ++i)
        for (int o = 0; o < co; ++o) rotated.w(2 - ky, 2 - kx, o, i) = kernel.w(ky, kx, i, o);
  grads.input = conv2d_forward(grad_output, rotated);

  const Eigen::Index plane = static_cast<Eigen::Index>(h) * w;
  const int block = detail::conv_row_block(h, w, ci);
  RowMatrix<Scalar> patches(Eigen::Index(9) * ci, static_cast<Eigen::Index>(block) * w);
  Eigen::Map<RowMatrix<Scalar>> wg(grads.kernel.weights.data(), Eigen::Index(9) * ci, co);
  for (int y0 = 0; y0 < h; y0 += block) {
    const int y1 = std::min(h, y0 + block);
    const Eigen::Index n = static_cast<Eigen::Index>(y1 - y0) * w;
    detail::unroll_taps(input, y0, y1, patches);
    Eigen::Map<const RowMatrix<Scalar>, 0, Eigen::OuterStride<>> gm(
        grad_output.data() + static_cast<Eigen::Index>(y0) * w, co, n,
        Eigen::OuterStride<>(plane));
    wg.noalias() += patches.leftCols(n) * gm.transpose();
  }
  return grads;
}

template <typename Scalar>
Tensor3<Scalar> relu_forward(const Tensor3<Scalar>& input) {
  Tensor3<Scalar> out = zeros_like(input);
  out.array() = input.array().max(Scalar(0));
  return out;
}

// Subgradient convention: zero at zero, so grad passes only where the
// pre-activation was strictly positive.
template <typename Scalar>
Tensor3<Scalar> relu_backward(const Tensor3<Scalar>& input, const Tensor3<Scalar>& grad_output) {
  if (!input.same_shape(grad_output))
    throw ShapeError("relu_backward: shape mismatch " + input.shape_str() + " vs " +
                     grad_output.shape_str());
  Tensor3<Scalar> out = zeros_like(input);
  out.array() = (input.array() > Scalar(0)).select(grad_output.array(), Scalar(0));
  return out;
}

template <typename Scalar>
Tensor3<Scalar> add(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b) {
  if (!a.same_shape(b))
    throw ShapeError("add: shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  Tensor3<Scalar> out = zeros_like(a);
  out.array() = a.array() + b.array();
  return out;
}

// Channel concatenation; either argument may have zero channels.
template <typename Scalar>
Tensor3<Scalar> concat_channels(const Tensor3<Scalar>& a, const Tensor3<Scalar>& b) {
  if (a.height() != b.height() || a.width() != b.width())
    throw ShapeError("concat_channels: spatial mismatch " + a.shape_str() + " vs " +
                     b.shape_str());
  Tensor3<Scalar> out(a.channels() + b.channels(), a.height(), a.width());
  std::copy_n(a.data(), a.size(), out.data());
  std::copy_n(b.data(), b.size(), out.data() + a.size());
  return out;
}

// Inverse of concat_channels; `first` may be 0 or x.channels(), in which case
// one of the halves is a zero-channel map.
template <typename Scalar>
std::pair<Tensor3<Scalar>, Tensor3<Scalar>> split_channels(const Tensor3<Scalar>& x, int first) {
  if (first < 0 || first > x.channels())
    throw ShapeError("split_channels: split point " + std::to_string(first) +
                     " outside 0.." + std::to_string(x.channels()));
  Tensor3<Scalar> a(first, x.height(), x.width());
  Tensor3<Scalar> b(x.channels() - first, x.height(), x.width());
  std::copy_n(x.data(), a.size(), a.data());
  std::copy_n(x.data() + a.size(), b.size(), b.data());
  return {std::move(a), std::move(b)};
}

// Rearranges channel groups of f*f into f-times larger spatial planes:
// out[c][y][x] = in[c*f*f + (y mod f)*f + (x mod f)][y div f][x div f].
template <typename Scalar>
Tensor3<Scalar> depth_to_space(const Tensor3<Scalar>& input, int factor) {
  if (factor < 1) throw ShapeError("depth_to_space: factor must be >= 1");
  const int f2 = factor * factor;
  if (input.channels() % f2 != 0)
    throw ShapeError("depth_to_space: " + std::to_string(input.channels()) +
                     " channels not divisible by " + std::to_string(f2));
  const int co = input.channels() / f2;
  Tensor3<Scalar> out(co, input.height() * factor, input.width() * factor);
  for (int c = 0; c < input.channels(); ++c) {
    const int oc = c / f2;
    const int dy = (c % f2) / factor;
    const int dx = c % factor;
    for (int y = 0; y < input.height(); ++y) {
      const Scalar* src = input.row_ptr(c, y);
      Scalar* dst = out.row_ptr(oc, y * factor + dy) + dx;
      for (int x = 0; x < input.width(); ++x) dst[static_cast<Eigen::Index>(x) * factor] = src[x];
    }
  }
  return out;
}

// Exact inverse of depth_to_space (used by the upscaling heads' backward pass).
template <typename Scalar>
Tensor3<Scalar> space_to_depth(const Tensor3<Scalar>& input, int factor) {
  if (factor < 1) throw ShapeError("space_to_depth: factor must be >= 1");
  if (input.height() % factor != 0 || input.width() % factor != 0)
    throw ShapeError("space_to_depth: spatial dims " + input.shape_str() +
                     " not divisible by " + std::to_string(factor));
  const int f2 = factor * factor;
  Tensor3<Scalar> out(input.channels() * f2, input.height() / factor, input.width() / factor);
  for (int c = 0; c < out.channels(); ++c) {
    const int ic = c / f2;
    const int dy = (c % f2) / factor;
    const int dx = c % factor;
    for (int y = 0; y < out.height(); ++y) {
      const Scalar* src = input.row_ptr(ic, y * factor + dy) + dx;
      Scalar* dst = out.row_ptr(c, y);
      for (int x = 0; x < out.width(); ++x) dst[x] = src[static_cast<Eigen::Index>(x) * factor];
    }
  }
  return out;
}

}  // namespace bsrn
