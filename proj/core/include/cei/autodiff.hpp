#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "cei/kernels.hpp"
#include "cei/tensor.hpp"

namespace cei {

enum class OpKind {
  Leaf,
  Conv2d,
  ConvTranspose2d,
  LeakyRelu,
  Tanh,
  Sigmoid,
  Add,
  Sub,
  Mul,
  Scale,
  Abs,
  Concat,
  Sum,
  Ssim,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);

enum class Activation { LeakyRelu, Tanh, Sigmoid };

inline constexpr double kDefaultLeakySlope = 0.2;

/// Handle to a node on a tape.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;

  [[nodiscard]] constexpr bool valid() const noexcept { return id != npos; }
  friend constexpr bool operator==(Var, Var) = default;
};

/// Records a forward computation and replays it in reverse to accumulate gradients.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it and a
/// single reverse sweep is a valid topological traversal. One tape is used by one
/// thread at a time.
template <typename T>
class BasicTape {
 public:
  using value_type = T;
  using var_type = Var;
  using TensorT = BasicTensor<T>;
  /// Reads the node's gradient from the tape and pushes contributions into its inputs.
  using BackwardFn = std::function<void(BasicTape&, const TensorT& grad_out)>;

  Var constant(TensorT value);
  Var parameter(TensorT value);

  Var record(OpKind kind, TensorT value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(OpKind kind, TensorT value, std::span<const Var> inputs, BackwardFn backward);

  [[nodiscard]] const TensorT& value(Var v) const { return node(v).value; }
  [[nodiscard]] bool requires_grad(Var v) const { return node(v).requires_grad; }
  [[nodiscard]] OpKind kind(Var v) const { return node(v).kind; }
  [[nodiscard]] std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient accumulated by the last backward(); zeros if the node was not reached.
  [[nodiscard]] TensorT grad(Var v) const;

  /// Zero-initialized gradient accumulator. Only valid for nodes that require grad.
  TensorT& grad_buffer(Var v);

  void accumulate(Var v, const TensorT& g);

  /// Reverse sweep from a scalar loss. Gradients from earlier sweeps are cleared.
  void backward(Var loss);

  /// Test hook: scales the upstream gradient handed to every node of `kind`
  /// recorded before the next call to seal_corruption().
  void corrupt_backward(OpKind kind, T factor) {
    corrupt_kind_ = kind;
    corrupt_factor_ = factor;
    corrupt_limit_ = std::numeric_limits<std::size_t>::max();
  }

  /// Nodes recorded from here on keep their true backward rule.
  void seal_corruption() { corrupt_limit_ = nodes_.size(); }

 private:
  struct Node {
    OpKind kind = OpKind::Leaf;
    TensorT value;
    TensorT grad;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  std::optional<OpKind> corrupt_kind_;
  T corrupt_factor_ = T{1};
  std::size_t corrupt_limit_ = 0;
};

using Tape = BasicTape<float>;
using Tape64 = BasicTape<double>;

extern template class BasicTape<float>;
extern template class BasicTape<double>;

/// Cross-correlation with zero padding. `b` may be an invalid Var for no bias.
template <typename T>
Var conv2d(BasicTape<T>& tape, Var x, Var w, Var b, const ConvGeometry& g);

/// Adjoint of conv2d with the same geometry; w is (in_ch of x, out_ch, kh, kw).
template <typename T>
Var conv_transpose2d(BasicTape<T>& tape, Var x, Var w, Var b, const ConvGeometry& g);

/// Elementwise activation. `slope` is only used by LeakyRelu.
template <typename T>
Var activation(BasicTape<T>& tape, Var x, Activation kind, double slope = kDefaultLeakySlope);

template <typename T>
Var add(BasicTape<T>& tape, Var a, Var b);
template <typename T>
Var sub(BasicTape<T>& tape, Var a, Var b);
/// Hadamard product.
template <typename T>
Var mul(BasicTape<T>& tape, Var a, Var b);
template <typename T>
Var scale(BasicTape<T>& tape, Var x, double factor);
/// Subgradient 0 at 0.
template <typename T>
Var abs(BasicTape<T>& tape, Var x);
template <typename T>
Var concat_channels(BasicTape<T>& tape, std::span<const Var> xs);
/// Sum of all elements as a (1,1,1,1) tensor.
template <typename T>
Var sum(BasicTape<T>& tape, Var x);

/// Scalar forms of the activations, shared with oracles and the blocks.
double leaky_relu(double x, double slope);
double sigmoid(double x);

}  // namespace cei
