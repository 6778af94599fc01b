#include "cei/tensor.hpp"

#include <cmath>

namespace cei {

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

void require_same_shape(const Shape& a, const Shape& b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, std::size_t first, std::size_t count) {
  const Shape& s = x.shape();
  if (first + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(first) + "," + std::to_string(first + count) +
                     ") exceeds " + to_string(s));
  }
  BasicTensor<T> out(Shape{s.n, count, s.h, s.w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < count; ++c) {
      auto src = x.plane(n, first + c);
      std::copy(src.begin(), src.end(), out.plane(n, c).begin());
    }
  }
  return out;
}

template <typename T>
double sum(const BasicTensor<T>& x) {
  double acc = 0.0;
  for (T v : x.data()) acc += static_cast<double>(v);
  return acc;
}

template <typename T>
double dot(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "dot");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

template class BasicTensor<float>;
template class BasicTensor<double>;

#define CEI_INSTANTIATE(T)                                                                    \
  template BasicTensor<T> slice_channels(const BasicTensor<T>&, std::size_t, std::size_t); \
  template double sum(const BasicTensor<T>&);                                               \
  template double dot(const BasicTensor<T>&, const BasicTensor<T>&);
CEI_INSTANTIATE(float)
CEI_INSTANTIATE(double)
#undef CEI_INSTANTIATE

}  // namespace cei
