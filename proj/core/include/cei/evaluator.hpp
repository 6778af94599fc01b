#pragma once

#include <memory>
#include <span>
#include <vector>

#include "cei/autodiff.hpp"
#include "cei/kernels.hpp"
#include "cei/tensor.hpp"

namespace cei {

/// Eager, gradient-free evaluation with the same op surface as BasicTape.
///
/// Values are reference counted, so intermediates are released as soon as the
/// forward code drops its handles. Used for prediction on full-size images.
template <typename T>
class BasicEvaluator {
 public:
  using value_type = T;
  struct Handle {
    std::shared_ptr<const BasicTensor<T>> ptr;
    [[nodiscard]] bool valid() const noexcept { return ptr != nullptr; }
  };
  using var_type = Handle;

  Handle constant(BasicTensor<T> value) const { return {std::make_shared<const BasicTensor<T>>(std::move(value))}; }
  /// Non-owning handle; `value` must outlive every use.
  Handle borrow(const BasicTensor<T>& value) const {
    return {std::shared_ptr<const BasicTensor<T>>(&value, [](const BasicTensor<T>*) {})};
  }
  const BasicTensor<T>& value(const Handle& h) const { return *h.ptr; }
};

using Evaluator = BasicEvaluator<float>;

template <typename T>
using EvalVar = typename BasicEvaluator<T>::Handle;

template <typename T>
EvalVar<T> conv2d(BasicEvaluator<T>& ev, const EvalVar<T>& x, const EvalVar<T>& w, const EvalVar<T>& b,
                  const ConvGeometry& g);
template <typename T>
EvalVar<T> conv_transpose2d(BasicEvaluator<T>& ev, const EvalVar<T>& x, const EvalVar<T>& w, const EvalVar<T>& b,
                            const ConvGeometry& g);
template <typename T>
EvalVar<T> activation(BasicEvaluator<T>& ev, const EvalVar<T>& x, Activation kind, double slope = kDefaultLeakySlope);
template <typename T>
EvalVar<T> add(BasicEvaluator<T>& ev, const EvalVar<T>& a, const EvalVar<T>& b);
template <typename T>
EvalVar<T> mul(BasicEvaluator<T>& ev, const EvalVar<T>& a, const EvalVar<T>& b);
template <typename T>
EvalVar<T> scale(BasicEvaluator<T>& ev, const EvalVar<T>& x, double factor);
template <typename T>
EvalVar<T> concat_channels(BasicEvaluator<T>& ev, std::span<const EvalVar<T>> xs);

}  // namespace cei
