#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace cei {

/// Raised when two operands disagree on shape. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (batch, channels, height, width).
struct Shape {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  [[nodiscard]] constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  [[nodiscard]] constexpr std::size_t plane() const noexcept { return h * w; }
  [[nodiscard]] constexpr std::array<std::size_t, 4> extents() const noexcept { return {n, c, h, w}; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Throws ShapeError mentioning `what` when a != b.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

/// Dense 4-D array in NCHW row-major order.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
    }
  }

  [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
  [[nodiscard]] std::size_t size() const noexcept { return data_.size(); }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] std::span<T> data() noexcept { return data_; }
  [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
  [[nodiscard]] const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept { return data_[offset(n, c, y, x)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
    return data_[offset(n, c, y, x)];
  }

  /// Contiguous (h, w) plane for one batch item and channel.
  [[nodiscard]] std::span<T> plane(std::size_t n, std::size_t c) noexcept {
    return std::span<T>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }
  [[nodiscard]] std::span<const T> plane(std::size_t n, std::size_t c) const noexcept {
    return std::span<const T>(data_).subspan(offset(n, c, 0, 0), shape_.plane());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  [[nodiscard]] bool all_finite() const noexcept;

  template <typename U>
  [[nodiscard]] BasicTensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Shape shape_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

/// Copies the channel range [first, first + count) of every batch item.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t first, std::size_t count);

/// Sum over all elements with a double accumulator.
template <typename T>
double sum(const BasicTensor<T>& x);

/// Inner product of two same-shaped tensors, double accumulator.
template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace cei
