#include "cei/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace cei {

void LossConfig::validate() const {
  if (!(phi >= 0.0) || !std::isfinite(phi)) throw std::invalid_argument("loss weight phi must be finite and >= 0");
  if (ssim_window < 3 || ssim_window % 2 == 0) {
    throw std::invalid_argument("SSIM window must be odd and >= 3, got " + std::to_string(ssim_window));
  }
  if (!(ssim_sigma > 0.0)) throw std::invalid_argument("SSIM sigma must be positive");
  if (!(dynamic_range > 0.0)) throw std::invalid_argument("dynamic range must be positive");
}

std::vector<double> gaussian_window(std::size_t length, double sigma) {
  std::vector<double> g(length);
  const double c = static_cast<double>(length / 2);
  for (std::size_t i = 0; i < length; ++i) {
    const double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  const double total = std::accumulate(g.begin(), g.end(), 0.0);
  for (double& v : g) v /= total;
  return g;
}

namespace {

/// Truncated separable Gaussian over one h x w plane.
class WindowFilter {
 public:
  WindowFilter(std::size_t h, std::size_t w, const LossConfig& cfg)
      : h_(h), w_(w), taps_(gaussian_window(cfg.ssim_window, cfg.ssim_sigma)), norm_(h * w), tmp_(h * w) {
    std::vector<double> ones(h * w, 1.0);
    blur(ones.data(), norm_.data());
  }

  /// Renormalized weighted mean around every pixel.
  void mean(const double* in, double* out) {
    blur(in, out);
    for (std::size_t i = 0; i < h_ * w_; ++i) out[i] /= norm_[i];
  }

  /// Adjoint of mean().
  void mean_adjoint(const double* in, double* out) {
    std::vector<double> scaled(h_ * w_);
    for (std::size_t i = 0; i < h_ * w_; ++i) scaled[i] = in[i] / norm_[i];
    blur(scaled.data(), out);
  }

 private:
  // Zero-padded symmetric blur; symmetric taps make it self-adjoint.
  void blur(const double* in, double* out) {
    const auto r = static_cast<std::ptrdiff_t>(taps_.size() / 2);
    const auto H = static_cast<std::ptrdiff_t>(h_);
    const auto W = static_cast<std::ptrdiff_t>(w_);
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const std::ptrdiff_t xx = x + k;
          if (xx >= 0 && xx < W) acc += taps_[static_cast<std::size_t>(k + r)] * in[y * W + xx];
        }
        tmp_[static_cast<std::size_t>(y * W + x)] = acc;
      }
    }
    for (std::ptrdiff_t y = 0; y < H; ++y) {
      for (std::ptrdiff_t x = 0; x < W; ++x) {
        double acc = 0.0;
        for (std::ptrdiff_t k = -r; k <= r; ++k) {
          const std::ptrdiff_t yy = y + k;
          if (yy >= 0 && yy < H) acc += taps_[static_cast<std::size_t>(k + r)] * tmp_[static_cast<std::size_t>(yy * W + x)];
        }
        out[y * W + x] = acc;
      }
    }
  }

  std::size_t h_, w_;
  std::vector<double> taps_;
  std::vector<double> norm_;
  std::vector<double> tmp_;
};

struct PlaneStats {
  std::vector<double> mx, my, exx, eyy, exy;
};

struct SsimWork {
  WindowFilter filter;
  double c1, c2;
  std::size_t n;
  std::vector<double> x, y, xx, yy, xy;
  PlaneStats st;

  SsimWork(std::size_t h, std::size_t w, const LossConfig& cfg)
      : filter(h, w, cfg),
        c1((cfg.k1 * cfg.dynamic_range) * (cfg.k1 * cfg.dynamic_range)),
        c2((cfg.k2 * cfg.dynamic_range) * (cfg.k2 * cfg.dynamic_range)),
        n(h * w),
        x(n), y(n), xx(n), yy(n), xy(n) {
    st.mx.resize(n);
    st.my.resize(n);
    st.exx.resize(n);
    st.eyy.resize(n);
    st.exy.resize(n);
  }

  template <typename T>
  void load(std::span<const T> px, std::span<const T> py) {
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(px[i]);
      y[i] = static_cast<double>(py[i]);
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    filter.mean(x.data(), st.mx.data());
    filter.mean(y.data(), st.my.data());
    filter.mean(xx.data(), st.exx.data());
    filter.mean(yy.data(), st.eyy.data());
    filter.mean(xy.data(), st.exy.data());
  }

  [[nodiscard]] double value(std::size_t i) const {
    const double mx = st.mx[i], my = st.my[i];
    const double a1 = 2.0 * mx * my + c1;
    const double a2 = 2.0 * (st.exy[i] - mx * my) + c2;
    const double b1 = mx * mx + my * my + c1;
    const double b2 = (st.exx[i] - mx * mx) + (st.eyy[i] - my * my) + c2;
    return (a1 * a2) / (b1 * b2);
  }

  /// Adds d(sum_i g_i * S_i)/dx into gx, where x is the first loaded image.
  void grad_first(std::span<const double> g, std::vector<double>& gx) {
    std::vector<double> d_mx(n), d_exx(n), d_exy(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double mx = st.mx[i], my = st.my[i];
      const double a1 = 2.0 * mx * my + c1;
      const double a2 = 2.0 * (st.exy[i] - mx * my) + c2;
      const double b1 = mx * mx + my * my + c1;
      const double b2 = (st.exx[i] - mx * mx) + (st.eyy[i] - my * my) + c2;
      const double s = (a1 * a2) / (b1 * b2);
      d_mx[i] = g[i] * s * (2.0 * my / a1 - 2.0 * mx / b1 - 2.0 * my / a2 + 2.0 * mx / b2);
      d_exx[i] = -g[i] * s / b2;
      d_exy[i] = g[i] * s * 2.0 / a2;
    }
    std::vector<double> t(n);
    filter.mean_adjoint(d_mx.data(), t.data());
    for (std::size_t i = 0; i < n; ++i) gx[i] += t[i];
    filter.mean_adjoint(d_exx.data(), t.data());
    for (std::size_t i = 0; i < n; ++i) gx[i] += 2.0 * x[i] * t[i];
    filter.mean_adjoint(d_exy.data(), t.data());
    for (std::size_t i = 0; i < n; ++i) gx[i] += y[i] * t[i];
  }
};

}  // namespace

template <typename T>
BasicTensor<T> ssim_map(const BasicTensor<T>& x, const BasicTensor<T>& y, const LossConfig& cfg) {
  require_same_shape(x.shape(), y.shape(), "ssim");
  cfg.validate();
  const Shape& s = x.shape();
  BasicTensor<T> out(s);
  if (s.numel() == 0) return out;
  SsimWork work(s.h, s.w, cfg);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      work.load(x.plane(n, c), y.plane(n, c));
      auto dst = out.plane(n, c);
      for (std::size_t i = 0; i < work.n; ++i) dst[i] = static_cast<T>(work.value(i));
    }
  }
  return out;
}

template <typename T>
double ssim(const BasicTensor<T>& x, const BasicTensor<T>& y, const LossConfig& cfg) {
  const auto map = ssim_map(x, y, cfg);
  return map.size() == 0 ? 1.0 : sum(map) / static_cast<double>(map.size());
}

template <typename T>
Var ssim_map(BasicTape<T>& tape, Var x, Var y, const LossConfig& cfg) {
  auto out = ssim_map(tape.value(x), tape.value(y), cfg);
  return tape.record(OpKind::Ssim, std::move(out), {x, y}, [x, y, cfg](BasicTape<T>& t, const BasicTensor<T>& go) {
    const bool need_x = t.requires_grad(x);
    const bool need_y = t.requires_grad(y);
    if (!need_x && !need_y) return;
    const Shape& s = t.value(x).shape();
    SsimWork work(s.h, s.w, cfg);
    std::vector<double> g(work.n), acc(work.n);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        auto gp = go.plane(n, c);
        for (std::size_t i = 0; i < work.n; ++i) g[i] = static_cast<double>(gp[i]);
        // SSIM is symmetric, so the second argument's gradient is the first's with roles swapped.
        for (int side = 0; side < 2; ++side) {
          const Var target = side == 0 ? x : y;
          if (!(side == 0 ? need_x : need_y)) continue;
          const Var other = side == 0 ? y : x;
          work.load(t.value(target).plane(n, c), t.value(other).plane(n, c));
          std::fill(acc.begin(), acc.end(), 0.0);
          work.grad_first(g, acc);
          auto dst = t.grad_buffer(target).plane(n, c);
          for (std::size_t i = 0; i < work.n; ++i) dst[i] += static_cast<T>(acc[i]);
        }
      }
    }
  });
}

double ssim_db(double s) {
  const double gap = 1.0 - s;
  if (!(gap > 1e-12)) return kDecibelCap;
  return std::min(kDecibelCap, -10.0 * std::log10(gap));
}

template <typename T>
double mean_squared_error(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "mse");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  return x.size() ? acc / static_cast<double>(x.size()) : 0.0;
}

template <typename T>
double mean_abs_difference(const BasicTensor<T>& x, const BasicTensor<T>& y) {
  require_same_shape(x.shape(), y.shape(), "mean_abs_difference");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += std::abs(static_cast<double>(x[i]) - static_cast<double>(y[i]));
  return x.size() ? acc / static_cast<double>(x.size()) : 0.0;
}

template <typename T>
double psnr(const BasicTensor<T>& x, const BasicTensor<T>& y, double peak) {
  const double mse = mean_squared_error(x, y);
  if (!(mse > 0.0)) return kDecibelCap;
  return std::min(kDecibelCap, 10.0 * std::log10(peak * peak / mse));
}

template <typename T>
Var smoothing_loss(BasicTape<T>& tape, Var pred, Var label, const LossConfig& cfg) {
  require_same_shape(tape.value(pred).shape(), tape.value(label).shape(), "smoothing_loss");
  cfg.validate();
  const auto count = static_cast<double>(tape.value(pred).size());
  Var total = sum(tape, abs(tape, sub(tape, label, pred)));
  if (cfg.phi != 0.0) {
    Var s = sum(tape, ssim_map(tape, pred, label, cfg));
    // phi * sum(1 - ssim) = phi * count - phi * sum(ssim)
    Var offset = tape.constant(BasicTensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(cfg.phi * count)));
    total = add(tape, total, add(tape, offset, scale(tape, s, -cfg.phi)));
  }
  return scale(tape, total, 1.0 / count);
}

template <typename T>
double smoothing_loss(const BasicTensor<T>& pred, const BasicTensor<T>& label, const LossConfig& cfg) {
  require_same_shape(pred.shape(), label.shape(), "smoothing_loss");
  cfg.validate();
  const auto count = static_cast<double>(pred.size());
  double total = mean_abs_difference(pred, label) * count;
  if (cfg.phi != 0.0) total += cfg.phi * (count - sum(ssim_map(pred, label, cfg)));
  return total / count;
}

template <typename T>
double total_variation(const BasicTensor<T>& x) {
  const Shape& s = x.shape();
  if (s.numel() == 0) return 0.0;
  double acc = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto p = x.plane(n, c);
      for (std::size_t yy = 0; yy < s.h; ++yy) {
        for (std::size_t xx = 0; xx < s.w; ++xx) {
          const double v = static_cast<double>(p[yy * s.w + xx]);
          if (xx + 1 < s.w) acc += std::abs(static_cast<double>(p[yy * s.w + xx + 1]) - v);
          if (yy + 1 < s.h) acc += std::abs(static_cast<double>(p[(yy + 1) * s.w + xx]) - v);
        }
      }
    }
  }
  return acc / static_cast<double>(s.numel());
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw std::invalid_argument("spearman needs two equally long series of at least 2 samples");
  }
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - mean) * (rb[i] - mean);
    va += (ra[i] - mean) * (ra[i] - mean);
    vb += (rb[i] - mean) * (rb[i] - mean);
  }
  if (va == 0.0 || vb == 0.0) return 0.0;
  return cov / std::sqrt(va * vb);
}

#define CEI_INSTANTIATE(T)                                                                     \
  template BasicTensor<T> ssim_map(const BasicTensor<T>&, const BasicTensor<T>&, const LossConfig&); \
  template double ssim(const BasicTensor<T>&, const BasicTensor<T>&, const LossConfig&);     \
  template Var ssim_map(BasicTape<T>&, Var, Var, const LossConfig&);                         \
  template double psnr(const BasicTensor<T>&, const BasicTensor<T>&, double);                \
  template double mean_squared_error(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template double mean_abs_difference(const BasicTensor<T>&, const BasicTensor<T>&);         \
  template Var smoothing_loss(BasicTape<T>&, Var, Var, const LossConfig&);                   \
  template double smoothing_loss(const BasicTensor<T>&, const BasicTensor<T>&, const LossConfig&); \
  template double total_variation(const BasicTensor<T>&);
CEI_INSTANTIATE(float)
CEI_INSTANTIATE(double)
#undef CEI_INSTANTIATE

}  // namespace cei
