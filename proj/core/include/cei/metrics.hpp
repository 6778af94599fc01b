#pragma once

// Image quality metrics and the training loss.
//
// SSIM uses Gaussian-weighted local statistics. Near the border the window is
// truncated and its weights renormalized, so every pixel gets a proper weighted
// mean and a constant image is still a constant image.

#include <cstddef>
#include <span>
#include <vector>

#include "cei/autodiff.hpp"
#include "cei/tensor.hpp"

namespace cei {

inline constexpr double kDecibelCap = 120.0;

struct LossConfig {
  double phi = 1.0;
  std::size_t ssim_window = 11;
  double ssim_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  /// Throws std::invalid_argument for phi < 0, an even or tiny window, or a nonpositive range.
  void validate() const;
};

/// Per-pixel SSIM of every (n, c) plane, same shape as the inputs.
template <typename T>
BasicTensor<T> ssim_map(const BasicTensor<T>& x, const BasicTensor<T>& y, const LossConfig& cfg = {});

/// Mean of ssim_map.
template <typename T>
double ssim(const BasicTensor<T>& x, const BasicTensor<T>& y, const LossConfig& cfg = {});

/// Differentiable ssim_map on a tape (gradients flow to both arguments).
template <typename T>
Var ssim_map(BasicTape<T>& tape, Var x, Var y, const LossConfig& cfg = {});

/// -10 log10(1 - s), capped at kDecibelCap.
double ssim_db(double s);

/// 10 log10(peak^2 / MSE); identical inputs give kDecibelCap.
template <typename T>
double psnr(const BasicTensor<T>& x, const BasicTensor<T>& y, double peak = 1.0);

template <typename T>
double mean_squared_error(const BasicTensor<T>& x, const BasicTensor<T>& y);

template <typename T>
double mean_abs_difference(const BasicTensor<T>& x, const BasicTensor<T>& y);

/// (sum |label - pred| + phi * sum (1 - ssim)) / element count, as a (1,1,1,1) node.
template <typename T>
Var smoothing_loss(BasicTape<T>& tape, Var pred, Var label, const LossConfig& cfg = {});

/// Plain-value form of smoothing_loss.
template <typename T>
double smoothing_loss(const BasicTensor<T>& pred, const BasicTensor<T>& label, const LossConfig& cfg = {});

/// Mean over the image of |horizontal difference| + |vertical difference|.
template <typename T>
double total_variation(const BasicTensor<T>& x);

/// Rank correlation with average ranks for ties. Needs at least two samples.
double spearman(std::span<const double> a, std::span<const double> b);

/// Normalized 1-D Gaussian taps of the given odd length.
std::vector<double> gaussian_window(std::size_t length, double sigma);

}  // namespace cei
