#include "cei/evaluator.hpp"

#include <cmath>
#include <stdexcept>

namespace cei {

template <typename T>
EvalVar<T> conv2d(BasicEvaluator<T>& ev, const EvalVar<T>& x, const EvalVar<T>& w, const EvalVar<T>& b,
                  const ConvGeometry& g) {
  return ev.constant(kernels::conv2d(ev.value(x), ev.value(w), b.valid() ? &ev.value(b) : nullptr, g));
}

template <typename T>
EvalVar<T> conv_transpose2d(BasicEvaluator<T>& ev, const EvalVar<T>& x, const EvalVar<T>& w, const EvalVar<T>& b,
                            const ConvGeometry& g) {
  return ev.constant(kernels::conv_transpose2d(ev.value(x), ev.value(w), b.valid() ? &ev.value(b) : nullptr, g));
}

template <typename T>
EvalVar<T> activation(BasicEvaluator<T>& ev, const EvalVar<T>& x, Activation kind, double slope) {
  const auto& in = ev.value(x);
  BasicTensor<T> out(in.shape());
  switch (kind) {
    case Activation::LeakyRelu:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= T{0} ? in[i] : static_cast<T>(slope) * in[i];
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<T>(sigmoid(static_cast<double>(in[i])));
      break;
  }
  return ev.constant(std::move(out));
}

template <typename T>
EvalVar<T> add(BasicEvaluator<T>& ev, const EvalVar<T>& a, const EvalVar<T>& b) {
  const auto& av = ev.value(a);
  const auto& bv = ev.value(b);
  require_same_shape(av.shape(), bv.shape(), "add");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return ev.constant(std::move(out));
}

template <typename T>
EvalVar<T> mul(BasicEvaluator<T>& ev, const EvalVar<T>& a, const EvalVar<T>& b) {
  const auto& av = ev.value(a);
  const auto& bv = ev.value(b);
  require_same_shape(av.shape(), bv.shape(), "mul");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return ev.constant(std::move(out));
}

template <typename T>
EvalVar<T> scale(BasicEvaluator<T>& ev, const EvalVar<T>& x, double factor) {
  const auto& in = ev.value(x);
  const T f = static_cast<T>(factor);
  BasicTensor<T> out(in.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * in[i];
  return ev.constant(std::move(out));
}

template <typename T>
EvalVar<T> concat_channels(BasicEvaluator<T>& ev, std::span<const EvalVar<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape first = ev.value(xs.front()).shape();
  std::size_t channels = 0;
  for (const auto& v : xs) {
    const Shape& s = ev.value(v).shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: spatial mismatch " + to_string(first) + " vs " + to_string(s));
    }
    channels += s.c;
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c0 = 0;
    for (const auto& v : xs) {
      const auto& in = ev.value(v);
      for (std::size_t c = 0; c < in.shape().c; ++c) {
        auto src = in.plane(n, c);
        std::copy(src.begin(), src.end(), out.plane(n, c0 + c).begin());
      }
      c0 += in.shape().c;
    }
  }
  return ev.constant(std::move(out));
}

#define CEI_INSTANTIATE(T)                                                                                       \
  template EvalVar<T> conv2d(BasicEvaluator<T>&, const EvalVar<T>&, const EvalVar<T>&, const EvalVar<T>&,        \
                             const ConvGeometry&);                                                               \
  template EvalVar<T> conv_transpose2d(BasicEvaluator<T>&, const EvalVar<T>&, const EvalVar<T>&,                 \
                                       const EvalVar<T>&, const ConvGeometry&);                                  \
  template EvalVar<T> activation(BasicEvaluator<T>&, const EvalVar<T>&, Activation, double);                     \
  template EvalVar<T> add(BasicEvaluator<T>&, const EvalVar<T>&, const EvalVar<T>&);                             \
  template EvalVar<T> mul(BasicEvaluator<T>&, const EvalVar<T>&, const EvalVar<T>&);                             \
  template EvalVar<T> scale(BasicEvaluator<T>&, const EvalVar<T>&, double);                                      \
  template EvalVar<T> concat_channels(BasicEvaluator<T>&, std::span<const EvalVar<T>>);
CEI_INSTANTIATE(float)
CEI_INSTANTIATE(double)
#undef CEI_INSTANTIATE

}  // namespace cei
