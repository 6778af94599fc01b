#pragma once

// Weight-space model generation: interpolation plus one-step and two-step
// extrapolation between two architecture-identical models A and B.
//
//   interpolate      V = g*A + (1-g)*B
//   forward          V = (A - (1-a)*B) / a
//   back             V = (B - b*A) / (1-b)
//   forward_ts       V = ((1+a)*B - (1-a)*A) / (2a)
//   back_ts          V = ((1+b)*A - (1-b)*B) / (2b)
//
// Every entry (kernels and biases alike) is blended in double precision and
// rounded once to the storage type, so all endpoint identities are exact.
//
// Note on direction: at a = 1 the forward mode returns A itself, and shrinking a
// moves away from B through A. Which endpoint is "smoother" therefore depends on
// how A and B were trained; the formulas are applied as written and the sweep
// tooling measures the resulting smoothness instead of assuming it.

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

#include "cei/param_set.hpp"

namespace cei {

enum class BlendMode { Interpolate, Forward, Back, ForwardTwoStep, BackTwoStep };

inline constexpr double kDefaultEpsilonFloor = 0.05;

/// Short CLI names: i, f, b, fts, bts.
std::string_view mode_short_name(BlendMode mode);
std::optional<BlendMode> parse_blend_mode(std::string_view text);

/// Raised for a coefficient outside [0,1] or one that would divide by less than the floor.
class CoefficientError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct BlendSpec {
  BlendMode mode = BlendMode::Interpolate;
  double coeff = 0.5;
  double epsilon_floor = kDefaultEpsilonFloor;

  /// Throws CoefficientError if the coefficient is unusable for the mode.
  void validate() const;
  /// Human-readable formula with the coefficient substituted.
  [[nodiscard]] std::string formula() const;
};

/// Weights (w_A, w_B) used for interpolation. They sum to exactly 1 and
/// interpolation_weights(1 - g) is the swapped pair, which makes
/// interpolate(A, B, g) and interpolate(B, A, 1 - g) bit-identical.
std::pair<double, double> interpolation_weights(double gamma);

/// Per-element blend of two scalars. Exposed for oracles and documentation tests.
double blend_value(double a, double b, const BlendSpec& spec);

template <typename T>
BasicParamSet<T> blend(const BasicParamSet<T>& a, const BasicParamSet<T>& b, const BlendSpec& spec);

template <typename T>
BasicParamSet<T> interpolate(const BasicParamSet<T>& a, const BasicParamSet<T>& b, double gamma) {
  return blend(a, b, BlendSpec{BlendMode::Interpolate, gamma});
}

/// `mode` must be Forward or Back.
template <typename T>
BasicParamSet<T> extrapolate_onestep(const BasicParamSet<T>& a, const BasicParamSet<T>& b, BlendMode mode,
                                     double coeff, double epsilon_floor = kDefaultEpsilonFloor);

/// `mode` must be ForwardTwoStep or BackTwoStep.
template <typename T>
BasicParamSet<T> extrapolate_twostep(const BasicParamSet<T>& a, const BasicParamSet<T>& b, BlendMode mode,
                                     double coeff, double epsilon_floor = kDefaultEpsilonFloor);

}  // namespace cei
