#include "cei/autodiff.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace cei {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 14> kOpNames{{
    {OpKind::Leaf, "leaf"},
    {OpKind::Conv2d, "conv2d"},
    {OpKind::ConvTranspose2d, "conv_transpose2d"},
    {OpKind::LeakyRelu, "lrelu"},
    {OpKind::Tanh, "tanh"},
    {OpKind::Sigmoid, "sigmoid"},
    {OpKind::Add, "add"},
    {OpKind::Sub, "sub"},
    {OpKind::Mul, "mul"},
    {OpKind::Scale, "scale"},
    {OpKind::Abs, "abs"},
    {OpKind::Concat, "concat"},
    {OpKind::Sum, "sum"},
    {OpKind::Ssim, "ssim"},
}};

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

double leaky_relu(double x, double slope) { return x >= 0.0 ? x : slope * x; }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Tape

template <typename T>
auto BasicTape<T>::node(Var v) const -> const Node& {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("tape: invalid variable handle");
  return nodes_[v.id];
}

template <typename T>
auto BasicTape<T>::node(Var v) -> Node& {
  if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("tape: invalid variable handle");
  return nodes_[v.id];
}

template <typename T>
Var BasicTape<T>::constant(TensorT value) {
  nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, {}, false});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var BasicTape<T>::parameter(TensorT value) {
  nodes_.push_back(Node{OpKind::Leaf, std::move(value), {}, {}, true});
  return Var{nodes_.size() - 1};
}

template <typename T>
Var BasicTape<T>::record(OpKind kind, TensorT value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(kind, std::move(value), std::span<const Var>(inputs.begin(), inputs.size()), std::move(backward));
}

template <typename T>
Var BasicTape<T>::record(OpKind kind, TensorT value, std::span<const Var> inputs, BackwardFn backward) {
  bool needs = false;
  for (Var in : inputs) {
    if (in.valid()) needs = needs || node(in).requires_grad;
  }
  Node n{kind, std::move(value), {}, {}, needs};
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

template <typename T>
auto BasicTape<T>::grad(Var v) const -> TensorT {
  const Node& n = node(v);
  if (n.grad.empty()) return TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
auto BasicTape<T>::grad_buffer(Var v) -> TensorT& {
  Node& n = node(v);
  if (!n.requires_grad) throw std::logic_error("tape: gradient requested for a constant");
  if (n.grad.empty()) n.grad = TensorT(n.value.shape());
  return n.grad;
}

template <typename T>
void BasicTape<T>::accumulate(Var v, const TensorT& g) {
  if (!v.valid() || !node(v).requires_grad) return;
  TensorT& buf = grad_buffer(v);
  require_same_shape(buf.shape(), g.shape(), "gradient accumulate");
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

template <typename T>
void BasicTape<T>::backward(Var loss) {
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(ln.value.shape()));
  }
  for (Node& n : nodes_) n.grad = TensorT();
  if (!ln.requires_grad) return;
  node(loss).grad = TensorT(ln.value.shape(), T{1});

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    if (corrupt_kind_ && *corrupt_kind_ == n.kind && i < corrupt_limit_) {
      TensorT scaled = n.grad;
      for (std::size_t k = 0; k < scaled.size(); ++k) scaled[k] *= corrupt_factor_;
      n.backward(*this, scaled);
    } else {
      // Rules only touch earlier nodes' buffers, so this reference stays valid.
      n.backward(*this, n.grad);
    }
  }
}

template class BasicTape<float>;
template class BasicTape<double>;

// ---------------------------------------------------------------------------
// Ops

template <typename T>
Var conv2d(BasicTape<T>& tape, Var x, Var w, Var b, const ConvGeometry& g) {
  const auto* bias = b.valid() ? &tape.value(b) : nullptr;
  auto out = kernels::conv2d(tape.value(x), tape.value(w), bias, g);
  return tape.record(OpKind::Conv2d, std::move(out), {x, w, b}, [x, w, b, g](BasicTape<T>& t, const BasicTensor<T>& go) {
    if (t.requires_grad(x)) kernels::conv2d_backward_input(go, t.value(w), g, t.grad_buffer(x));
    if (t.requires_grad(w)) kernels::conv2d_backward_weight(go, t.value(x), g, t.grad_buffer(w));
    if (b.valid() && t.requires_grad(b)) kernels::bias_backward(go, t.grad_buffer(b));
  });
}

template <typename T>
Var conv_transpose2d(BasicTape<T>& tape, Var x, Var w, Var b, const ConvGeometry& g) {
  const auto* bias = b.valid() ? &tape.value(b) : nullptr;
  auto out = kernels::conv_transpose2d(tape.value(x), tape.value(w), bias, g);
  return tape.record(OpKind::ConvTranspose2d, std::move(out), {x, w, b},
                     [x, w, b, g](BasicTape<T>& t, const BasicTensor<T>& go) {
                       if (t.requires_grad(x)) {
                         auto gx = kernels::conv2d(go, t.value(w), static_cast<const BasicTensor<T>*>(nullptr), g);
                         t.accumulate(x, gx);
                       }
                       // Roles of input and output swap relative to conv2d.
                       if (t.requires_grad(w)) kernels::conv2d_backward_weight(t.value(x), go, g, t.grad_buffer(w));
                       if (b.valid() && t.requires_grad(b)) kernels::bias_backward(go, t.grad_buffer(b));
                     });
}

template <typename T>
Var activation(BasicTape<T>& tape, Var x, Activation kind, double slope) {
  const auto& in = tape.value(x);
  BasicTensor<T> out(in.shape());
  OpKind op = OpKind::LeakyRelu;
  switch (kind) {
    case Activation::LeakyRelu:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] >= T{0} ? in[i] : static_cast<T>(slope) * in[i];
      op = OpKind::LeakyRelu;
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = std::tanh(in[i]);
      op = OpKind::Tanh;
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = static_cast<T>(sigmoid(static_cast<double>(in[i])));
      op = OpKind::Sigmoid;
      break;
  }
  // The node about to be recorded; its saved output feeds the tanh/sigmoid derivatives.
  const Var self{tape.size()};
  return tape.record(op, std::move(out), {x}, [x, self, kind, slope](BasicTape<T>& t, const BasicTensor<T>& go) {
    auto& gx = t.grad_buffer(x);
    switch (kind) {
      case Activation::LeakyRelu: {
        const auto& xin = t.value(x);
        const T s = static_cast<T>(slope);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += xin[i] >= T{0} ? go[i] : s * go[i];
        break;
      }
      case Activation::Tanh: {
        const auto& y = t.value(self);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (T{1} - y[i] * y[i]);
        break;
      }
      case Activation::Sigmoid: {
        const auto& y = t.value(self);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i] * (T{1} - y[i]);
        break;
      }
    }
  });
}

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same_shape(av.shape(), bv.shape(), "add");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return tape.record(OpKind::Add, std::move(out), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& go) {
    t.accumulate(a, go);
    t.accumulate(b, go);
  });
}

template <typename T>
Var sub(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same_shape(av.shape(), bv.shape(), "sub");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return tape.record(OpKind::Sub, std::move(out), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& go) {
    t.accumulate(a, go);
    if (t.requires_grad(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <typename T>
Var mul(BasicTape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  require_same_shape(av.shape(), bv.shape(), "mul");
  BasicTensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return tape.record(OpKind::Mul, std::move(out), {a, b}, [a, b](BasicTape<T>& t, const BasicTensor<T>& go) {
    const auto& av2 = t.value(a);
    const auto& bv2 = t.value(b);
    if (t.requires_grad(a)) {
      auto& ga = t.grad_buffer(a);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv2[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad_buffer(b);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av2[i];
    }
  });
}

template <typename T>
Var scale(BasicTape<T>& tape, Var x, double factor) {
  const auto& in = tape.value(x);
  const T f = static_cast<T>(factor);
  BasicTensor<T> out(in.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * in[i];
  return tape.record(OpKind::Scale, std::move(out), {x}, [x, f](BasicTape<T>& t, const BasicTensor<T>& go) {
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += f * go[i];
  });
}

template <typename T>
Var abs(BasicTape<T>& tape, Var x) {
  const auto& in = tape.value(x);
  BasicTensor<T> out(in.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(in[i]);
  return tape.record(OpKind::Abs, std::move(out), {x}, [x](BasicTape<T>& t, const BasicTensor<T>& go) {
    const auto& xin = t.value(x);
    auto& gx = t.grad_buffer(x);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (xin[i] > T{0}) {
        gx[i] += go[i];
      } else if (xin[i] < T{0}) {
        gx[i] -= go[i];
      }
    }
  });
}

template <typename T>
Var concat_channels(BasicTape<T>& tape, std::span<const Var> xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: no inputs");
  const Shape first = tape.value(xs.front()).shape();
  std::size_t channels = 0;
  for (Var v : xs) {
    const Shape& s = tape.value(v).shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError("concat_channels: spatial mismatch " + to_string(first) + " vs " + to_string(s));
    }
    channels += s.c;
  }
  BasicTensor<T> out(Shape{first.n, channels, first.h, first.w});
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c0 = 0;
    for (Var v : xs) {
      const auto& in = tape.value(v);
      for (std::size_t c = 0; c < in.shape().c; ++c) {
        auto src = in.plane(n, c);
        std::copy(src.begin(), src.end(), out.plane(n, c0 + c).begin());
      }
      c0 += in.shape().c;
    }
  }
  std::vector<Var> inputs(xs.begin(), xs.end());
  return tape.record(OpKind::Concat, std::move(out), std::span<const Var>(inputs),
                     [inputs](BasicTape<T>& t, const BasicTensor<T>& go) {
                       std::size_t c0 = 0;
                       for (Var v : inputs) {
                         const std::size_t cn = t.value(v).shape().c;
                         if (t.requires_grad(v)) {
                           auto& gx = t.grad_buffer(v);
                           for (std::size_t n = 0; n < go.shape().n; ++n) {
                             for (std::size_t c = 0; c < cn; ++c) {
                               auto src = go.plane(n, c0 + c);
                               auto dst = gx.plane(n, c);
                               for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
                             }
                           }
                         }
                         c0 += cn;
                       }
                     });
}

template <typename T>
Var sum(BasicTape<T>& tape, Var x) {
  const auto& in = tape.value(x);
  BasicTensor<T> out(Shape{1, 1, 1, 1}, static_cast<T>(sum(in)));
  return tape.record(OpKind::Sum, std::move(out), {x}, [x](BasicTape<T>& t, const BasicTensor<T>& go) {
    auto& gx = t.grad_buffer(x);
    const T g = go[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

#define CEI_INSTANTIATE(T)                                                                   \
  template Var conv2d(BasicTape<T>&, Var, Var, Var, const ConvGeometry&);                   \
  template Var conv_transpose2d(BasicTape<T>&, Var, Var, Var, const ConvGeometry&);         \
  template Var activation(BasicTape<T>&, Var, Activation, double);                          \
  template Var add(BasicTape<T>&, Var, Var);                                                 \
  template Var sub(BasicTape<T>&, Var, Var);                                                 \
  template Var mul(BasicTape<T>&, Var, Var);                                                 \
  template Var scale(BasicTape<T>&, Var, double);                                            \
  template Var abs(BasicTape<T>&, Var);                                                      \
  template Var concat_channels(BasicTape<T>&, std::span<const Var>);                         \
  template Var sum(BasicTape<T>&, Var);
CEI_INSTANTIATE(float)
CEI_INSTANTIATE(double)
#undef CEI_INSTANTIATE

}  // namespace cei
