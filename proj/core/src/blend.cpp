#include "cei/blend.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <utility>

namespace cei {

namespace {

constexpr std::array<std::pair<BlendMode, std::string_view>, 5> kModeNames{{
    {BlendMode::Interpolate, "i"},
    {BlendMode::Forward, "f"},
    {BlendMode::Back, "b"},
    {BlendMode::ForwardTwoStep, "fts"},
    {BlendMode::BackTwoStep, "bts"},
}};

std::string fmt_coeff(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string_view mode_short_name(BlendMode mode) {
  for (const auto& [m, name] : kModeNames) {
    if (m == mode) return name;
  }
  return "?";
}

std::optional<BlendMode> parse_blend_mode(std::string_view text) {
  for (const auto& [m, name] : kModeNames) {
    if (name == text) return m;
  }
  if (text == "interpolate") return BlendMode::Interpolate;
  if (text == "forward") return BlendMode::Forward;
  if (text == "back") return BlendMode::Back;
  if (text == "forward_ts") return BlendMode::ForwardTwoStep;
  if (text == "back_ts") return BlendMode::BackTwoStep;
  return std::nullopt;
}

void BlendSpec::validate() const {
  const std::string mode_name(mode_short_name(mode));
  if (!std::isfinite(coeff) || coeff < 0.0 || coeff > 1.0) {
    throw CoefficientError("coefficient " + fmt_coeff(coeff) + " outside [0,1] for mode " + mode_name);
  }
  if (!(epsilon_floor > 0.0 && epsilon_floor <= 1.0)) {
    throw CoefficientError("extrapolation floor " + fmt_coeff(epsilon_floor) + " outside (0,1]");
  }
  switch (mode) {
    case BlendMode::Interpolate:
      return;
    case BlendMode::Forward:
    case BlendMode::ForwardTwoStep:
    case BlendMode::BackTwoStep:
      if (coeff < epsilon_floor) {
        throw CoefficientError("coefficient " + fmt_coeff(coeff) + " is below the extrapolation floor " +
                               fmt_coeff(epsilon_floor) + " for mode " + mode_name);
      }
      return;
    case BlendMode::Back:
      // Denominator is (1 - beta).
      if (1.0 - coeff < epsilon_floor) {
        throw CoefficientError("coefficient " + fmt_coeff(coeff) + " leaves 1-coeff below the extrapolation floor " +
                               fmt_coeff(epsilon_floor) + " for mode " + mode_name);
      }
      return;
  }
}

std::string BlendSpec::formula() const {
  const std::string c = fmt_coeff(coeff);
  switch (mode) {
    case BlendMode::Interpolate:
      return "V = " + c + "*A + (1-" + c + ")*B";
    case BlendMode::Forward:
      return "V = (A - (1-" + c + ")*B) / " + c;
    case BlendMode::Back:
      return "V = (B - " + c + "*A) / (1-" + c + ")";
    case BlendMode::ForwardTwoStep:
      return "V = ((1+" + c + ")*B - (1-" + c + ")*A) / (2*" + c + ")";
    case BlendMode::BackTwoStep:
      return "V = ((1+" + c + ")*A - (1-" + c + ")*B) / (2*" + c + ")";
  }
  return {};
}

std::pair<double, double> interpolation_weights(double gamma) {
  // The larger weight is taken as given and the smaller one as its exact
  // complement, so swapping A and B with gamma -> 1 - gamma reproduces the same pair.
  if (gamma >= 0.5) return {gamma, 1.0 - gamma};
  const double wb = 1.0 - gamma;
  return {1.0 - wb, wb};
}

double blend_value(double a, double b, const BlendSpec& spec) {
  const double k = spec.coeff;
  switch (spec.mode) {
    case BlendMode::Interpolate: {
      const auto [wa, wb] = interpolation_weights(k);
      return wa * a + wb * b;
    }
    case BlendMode::Forward:
      return (a - (1.0 - k) * b) / k;
    case BlendMode::Back:
      return (b - k * a) / (1.0 - k);
    case BlendMode::ForwardTwoStep:
      return ((1.0 + k) * b - (1.0 - k) * a) / (2.0 * k);
    case BlendMode::BackTwoStep:
      return ((1.0 + k) * a - (1.0 - k) * b) / (2.0 * k);
  }
  return 0.0;
}

template <typename T>
BasicParamSet<T> blend(const BasicParamSet<T>& a, const BasicParamSet<T>& b, const BlendSpec& spec) {
  CompatReport report = compat_check(a, b);
  if (!report.compatible) throw IncompatibleModels(std::move(report));
  spec.validate();

  BasicParamSet<T> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& ta = a[i].tensor;
    const auto& tb = b[i].tensor;
    BasicTensor<T> v(ta.shape());
    for (std::size_t k = 0; k < v.size(); ++k) {
      v[k] = static_cast<T>(blend_value(static_cast<double>(ta[k]), static_cast<double>(tb[k]), spec));
    }
    out.add(a[i].name, std::move(v));
  }
  out.meta() = a.meta();
  return out;
}

template <typename T>
BasicParamSet<T> extrapolate_onestep(const BasicParamSet<T>& a, const BasicParamSet<T>& b, BlendMode mode,
                                     double coeff, double epsilon_floor) {
  if (mode != BlendMode::Forward && mode != BlendMode::Back) {
    throw std::invalid_argument("extrapolate_onestep: mode must be forward or back");
  }
  return blend(a, b, BlendSpec{mode, coeff, epsilon_floor});
}

template <typename T>
BasicParamSet<T> extrapolate_twostep(const BasicParamSet<T>& a, const BasicParamSet<T>& b, BlendMode mode,
                                     double coeff, double epsilon_floor) {
  if (mode != BlendMode::ForwardTwoStep && mode != BlendMode::BackTwoStep) {
    throw std::invalid_argument("extrapolate_twostep: mode must be forward_ts or back_ts");
  }
  return blend(a, b, BlendSpec{mode, coeff, epsilon_floor});
}

#define CEI_INSTANTIATE(T)                                                                                   \
  template BasicParamSet<T> blend(const BasicParamSet<T>&, const BasicParamSet<T>&, const BlendSpec&);       \
  template BasicParamSet<T> extrapolate_onestep(const BasicParamSet<T>&, const BasicParamSet<T>&, BlendMode, \
                                                double, double);                                             \
  template BasicParamSet<T> extrapolate_twostep(const BasicParamSet<T>&, const BasicParamSet<T>&, BlendMode, \
                                                double, double);
CEI_INSTANTIATE(float)
CEI_INSTANTIATE(double)
#undef CEI_INSTANTIATE

}  // namespace cei
