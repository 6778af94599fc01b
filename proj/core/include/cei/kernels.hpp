#pragma once

// Tape-free convolution kernels. The autodiff ops are thin wrappers over these.

#include <cstddef>

#include "cei/tensor.hpp"

namespace cei {

struct ConvGeometry {
  int stride = 1;
  int dilation = 1;
  int padding = 0;
};

/// floor((in + 2p - d(k-1) - 1) / s) + 1
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g);
/// (in - 1)s - 2p + d(k-1) + 1, the extent whose conv2d image has `in` samples.
std::size_t conv_transpose_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g);

namespace kernels {

/// out = bias + x (*) w. `bias` may be empty. w is (out_ch, in_ch, kh, kw).
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* bias,
                      const ConvGeometry& g);

/// grad_x += conv2d^T(grad_out, w). grad_x must already have x's shape.
template <typename T>
void conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& w, const ConvGeometry& g,
                           BasicTensor<T>& grad_x);

/// grad_w += correlation of grad_out with x over the conv geometry.
template <typename T>
void conv2d_backward_weight(const BasicTensor<T>& grad_out, const BasicTensor<T>& x, const ConvGeometry& g,
                            BasicTensor<T>& grad_w);

/// grad_b[c] += sum of grad_out over (n, y, x) for channel c.
template <typename T>
void bias_backward(const BasicTensor<T>& grad_out, BasicTensor<T>& grad_b);

/// Adjoint of conv2d with the same geometry. w is (in_ch of y, out_ch, kh, kw).
template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& y, const BasicTensor<T>& w, const BasicTensor<T>* bias,
                                const ConvGeometry& g);

}  // namespace kernels

/// Validates (x, w, bias) for a conv2d and throws ShapeError naming both shapes.
void check_conv_shapes(const Shape& x, const Shape& w, const Shape* bias, const char* op);

}  // namespace cei
