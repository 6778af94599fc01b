#include "cei/kernels.hpp"

#include <algorithm>
#include <string>

namespace cei {

namespace {

std::ptrdiff_t floor_div(std::ptrdiff_t a, std::ptrdiff_t b) {
  std::ptrdiff_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::ptrdiff_t ceil_div(std::ptrdiff_t a, std::ptrdiff_t b) { return -floor_div(-a, b); }

/// Output index range [lo, hi) whose tap `offset + o*stride` lands inside [0, in).
struct TapRange {
  std::ptrdiff_t lo;
  std::ptrdiff_t hi;
};

TapRange tap_range(std::ptrdiff_t offset, std::ptrdiff_t stride, std::ptrdiff_t in, std::ptrdiff_t out) {
  std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, ceil_div(-offset, stride));
  std::ptrdiff_t hi = std::min<std::ptrdiff_t>(out, floor_div(in - 1 - offset, stride) + 1);
  return {lo, std::max(lo, hi)};
}

// Eight independent partial sums so the reduction vectorizes without reassociation flags.
template <typename T>
T dot_row(const T* a, const T* b, std::ptrdiff_t n) {
  T acc[8] = {};
  std::ptrdiff_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int k = 0; k < 8; ++k) acc[k] += a[i + k] * b[i + k];
  }
  for (; i < n; ++i) acc[0] += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename T>
T dot_row_strided(const T* a, const T* b, std::ptrdiff_t stride_b, std::ptrdiff_t n) {
  T acc = 0;
  for (std::ptrdiff_t i = 0; i < n; ++i) acc += a[i] * b[i * stride_b];
  return acc;
}

}  // namespace

std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  const std::ptrdiff_t span = static_cast<std::ptrdiff_t>(g.dilation) * (static_cast<std::ptrdiff_t>(kernel) - 1) + 1;
  const std::ptrdiff_t padded = static_cast<std::ptrdiff_t>(in) + 2 * g.padding;
  if (padded < span) return 0;
  return static_cast<std::size_t>((padded - span) / g.stride + 1);
}

std::size_t conv_transpose_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& g) {
  const std::ptrdiff_t v = (static_cast<std::ptrdiff_t>(in) - 1) * g.stride - 2 * g.padding +
                           static_cast<std::ptrdiff_t>(g.dilation) * (static_cast<std::ptrdiff_t>(kernel) - 1) + 1;
  return v > 0 ? static_cast<std::size_t>(v) : 0;
}

void check_conv_shapes(const Shape& x, const Shape& w, const Shape* bias, const char* op) {
  if (w.c != x.c) {
    throw ShapeError(std::string(op) + ": input " + to_string(x) + " has " + std::to_string(x.c) +
                     " channels but weight " + to_string(w) + " expects " + std::to_string(w.c));
  }
  if (bias != nullptr && bias->numel() != w.n) {
    throw ShapeError(std::string(op) + ": bias " + to_string(*bias) + " does not match weight " + to_string(w));
  }
}

namespace kernels {

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>* bias,
                      const ConvGeometry& g) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  check_conv_shapes(xs, ws, bias ? &bias->shape() : nullptr, "conv2d");
  const std::size_t oh = conv_output_extent(xs.h, ws.h, g);
  const std::size_t ow = conv_output_extent(xs.w, ws.w, g);
  if (oh == 0 || ow == 0) {
    throw ShapeError("conv2d: kernel " + to_string(ws) + " does not fit input " + to_string(xs));
  }
  BasicTensor<T> out(Shape{xs.n, ws.n, oh, ow});
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(xs.h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(xs.w);
  const std::ptrdiff_t s = g.stride;

  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t oc = 0; oc < ws.n; ++oc) {
      auto op = out.plane(n, oc);
      std::fill(op.begin(), op.end(), bias ? (*bias)[oc] : T{0});
      for (std::size_t ic = 0; ic < ws.c; ++ic) {
        const T* in = x.plane(n, ic).data();
        for (std::size_t ky = 0; ky < ws.h; ++ky) {
          const std::ptrdiff_t yoff = static_cast<std::ptrdiff_t>(ky) * g.dilation - g.padding;
          const TapRange ry = tap_range(yoff, s, H, static_cast<std::ptrdiff_t>(oh));
          for (std::size_t kx = 0; kx < ws.w; ++kx) {
            const T wv = w.at(oc, ic, ky, kx);
            if (wv == T{0}) continue;
            const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) * g.dilation - g.padding;
            const TapRange rx = tap_range(xoff, s, W, static_cast<std::ptrdiff_t>(ow));
            for (std::ptrdiff_t oy = ry.lo; oy < ry.hi; ++oy) {
              T* orow = op.data() + oy * static_cast<std::ptrdiff_t>(ow);
              const T* irow = in + (oy * s + yoff) * W + xoff;
              if (s == 1) {
                for (std::ptrdiff_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * irow[ox];
              } else {
                for (std::ptrdiff_t ox = rx.lo; ox < rx.hi; ++ox) orow[ox] += wv * irow[ox * s];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
void conv2d_backward_input(const BasicTensor<T>& grad_out, const BasicTensor<T>& w, const ConvGeometry& g,
                           BasicTensor<T>& grad_x) {
  const Shape& gs = grad_out.shape();
  const Shape& ws = w.shape();
  const Shape& xs = grad_x.shape();
  if (gs.c != ws.n || xs.c != ws.c || gs.n != xs.n) {
    throw ShapeError("conv2d backward: gradient " + to_string(gs) + " inconsistent with weight " + to_string(ws) +
                     " and input " + to_string(xs));
  }
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(xs.h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(xs.w);
  const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(gs.h);
  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(gs.w);
  const std::ptrdiff_t s = g.stride;

  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t ic = 0; ic < ws.c; ++ic) {
      T* gin = grad_x.plane(n, ic).data();
      for (std::size_t oc = 0; oc < ws.n; ++oc) {
        const T* gop = grad_out.plane(n, oc).data();
        for (std::size_t ky = 0; ky < ws.h; ++ky) {
          const std::ptrdiff_t yoff = static_cast<std::ptrdiff_t>(ky) * g.dilation - g.padding;
          const TapRange ry = tap_range(yoff, s, H, oh);
          for (std::size_t kx = 0; kx < ws.w; ++kx) {
            const T wv = w.at(oc, ic, ky, kx);
            if (wv == T{0}) continue;
            const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) * g.dilation - g.padding;
            const TapRange rx = tap_range(xoff, s, W, ow);
            for (std::ptrdiff_t oy = ry.lo; oy < ry.hi; ++oy) {
              const T* grow = gop + oy * ow;
              T* irow = gin + (oy * s + yoff) * W + xoff;
              if (s == 1) {
                for (std::ptrdiff_t ox = rx.lo; ox < rx.hi; ++ox) irow[ox] += wv * grow[ox];
              } else {
                for (std::ptrdiff_t ox = rx.lo; ox < rx.hi; ++ox) irow[ox * s] += wv * grow[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward_weight(const BasicTensor<T>& grad_out, const BasicTensor<T>& x, const ConvGeometry& g,
                            BasicTensor<T>& grad_w) {
  const Shape& gs = grad_out.shape();
  const Shape& ws = grad_w.shape();
  const Shape& xs = x.shape();
  if (gs.c != ws.n || xs.c != ws.c || gs.n != xs.n) {
    throw ShapeError("conv2d weight backward: gradient " + to_string(gs) + " inconsistent with weight " +
                     to_string(ws) + " and input " + to_string(xs));
  }
  const std::ptrdiff_t H = static_cast<std::ptrdiff_t>(xs.h);
  const std::ptrdiff_t W = static_cast<std::ptrdiff_t>(xs.w);
  const std::ptrdiff_t oh = static_cast<std::ptrdiff_t>(gs.h);
  const std::ptrdiff_t ow = static_cast<std::ptrdiff_t>(gs.w);
  const std::ptrdiff_t s = g.stride;

  for (std::size_t oc = 0; oc < ws.n; ++oc) {
    for (std::size_t ic = 0; ic < ws.c; ++ic) {
      for (std::size_t ky = 0; ky < ws.h; ++ky) {
        const std::ptrdiff_t yoff = static_cast<std::ptrdiff_t>(ky) * g.dilation - g.padding;
        const TapRange ry = tap_range(yoff, s, H, oh);
        for (std::size_t kx = 0; kx < ws.w; ++kx) {
          const std::ptrdiff_t xoff = static_cast<std::ptrdiff_t>(kx) * g.dilation - g.padding;
          const TapRange rx = tap_range(xoff, s, W, ow);
          T acc = 0;
          for (std::size_t n = 0; n < xs.n; ++n) {
            const T* gop = grad_out.plane(n, oc).data();
            const T* in = x.plane(n, ic).data();
            for (std::ptrdiff_t oy = ry.lo; oy < ry.hi; ++oy) {
              const T* grow = gop + oy * ow + rx.lo;
              const T* irow = in + (oy * s + yoff) * W + xoff + rx.lo * s;
              if (s == 1) {
                acc += dot_row(grow, irow, rx.hi - rx.lo);
              } else {
                acc += dot_row_strided(grow, irow, s, rx.hi - rx.lo);
              }
            }
          }
          grad_w.at(oc, ic, ky, kx) += acc;
        }
      }
    }
  }
}

template <typename T>
void bias_backward(const BasicTensor<T>& grad_out, BasicTensor<T>& grad_b) {
  const Shape& gs = grad_out.shape();
  if (grad_b.size() != gs.c) {
    throw ShapeError("bias backward: bias " + to_string(grad_b.shape()) + " vs gradient " + to_string(gs));
  }
  for (std::size_t c = 0; c < gs.c; ++c) {
    T acc = 0;
    for (std::size_t n = 0; n < gs.n; ++n) {
      for (T v : grad_out.plane(n, c)) acc += v;
    }
    grad_b[c] += acc;
  }
}

template <typename T>
BasicTensor<T> conv_transpose2d(const BasicTensor<T>& y, const BasicTensor<T>& w, const BasicTensor<T>* bias,
                                const ConvGeometry& g) {
  const Shape& ys = y.shape();
  const Shape& ws = w.shape();
  if (ws.n != ys.c) {
    throw ShapeError("conv_transpose2d: input " + to_string(ys) + " has " + std::to_string(ys.c) +
                     " channels but weight " + to_string(ws) + " expects " + std::to_string(ws.n));
  }
  if (bias != nullptr && bias->size() != ws.c) {
    throw ShapeError("conv_transpose2d: bias " + to_string(bias->shape()) + " does not match weight " +
                     to_string(ws));
  }
  const std::size_t oh = conv_transpose_output_extent(ys.h, ws.h, g);
  const std::size_t ow = conv_transpose_output_extent(ys.w, ws.w, g);
  if (oh == 0 || ow == 0 || conv_output_extent(oh, ws.h, g) != ys.h || conv_output_extent(ow, ws.w, g) != ys.w) {
    throw ShapeError("conv_transpose2d: geometry does not invert for input " + to_string(ys) + " and weight " +
                     to_string(ws));
  }
  BasicTensor<T> out(Shape{ys.n, ws.c, oh, ow});
  if (bias != nullptr) {
    for (std::size_t n = 0; n < ys.n; ++n) {
      for (std::size_t c = 0; c < ws.c; ++c) {
        auto p = out.plane(n, c);
        std::fill(p.begin(), p.end(), (*bias)[c]);
      }
    }
  }
  conv2d_backward_input(y, w, g, out);
  return out;
}

#define CEI_INSTANTIATE(T)                                                                                    \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*,         \
                                 const ConvGeometry&);                                                        \
  template void conv2d_backward_input(const BasicTensor<T>&, const BasicTensor<T>&, const ConvGeometry&,      \
                                      BasicTensor<T>&);                                                       \
  template void conv2d_backward_weight(const BasicTensor<T>&, const BasicTensor<T>&, const ConvGeometry&,     \
                                       BasicTensor<T>&);                                                      \
  template void bias_backward(const BasicTensor<T>&, BasicTensor<T>&);                                        \
  template BasicTensor<T> conv_transpose2d(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*, \
                                           const ConvGeometry&);
CEI_INSTANTIATE(float)
CEI_INSTANTIATE(double)
#undef CEI_INSTANTIATE

}  // namespace kernels
}  // namespace cei
