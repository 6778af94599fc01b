#include "cei/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <type_traits>

#include "cei/blocks.hpp"
#include "cei/metrics.hpp"
#include "cei/random.hpp"

namespace cei {

namespace {

using Fn = std::function<Var(Tape64&, std::span<const Var>)>;

struct Input {
  std::string name;
  Tensor64 value;
  /// Constants take part in the forward but are not probed.
  bool differentiable = true;
};

struct Case {
  std::string name;
  std::vector<Input> inputs;
  Fn fn;
  std::size_t probes_per_input = 16;
};

Tensor64 random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor64 t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

/// Values in +-[0.1, 1] so kinks at zero stay out of reach of the probe step.
Tensor64 away_from_zero(Rng& rng, Shape s) {
  Tensor64 t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return t;
}

Input param_input(const ParamSet64::Entry& e) { return {e.name, e.tensor, true}; }

class Checker {
 public:
  Checker(const GradCheckOptions& opts, Rng& rng) : opts_(opts), rng_(rng) {}

  GradCheckResult run(Case& c) {
    GradCheckResult res;
    res.name = c.name;

    // Fixed random reduction weights, drawn once the output shape is known.
    {
      Tape64 probe;
      auto vars = bind(probe, c.inputs, false);
      weights_ = random_tensor(rng_, probe.value(c.fn(probe, vars)).shape());
    }

    Tape64 tape;
    if (opts_.corrupt) tape.corrupt_backward(*opts_.corrupt, opts_.corrupt_factor);
    auto vars = bind(tape, c.inputs, true);
    Var out = c.fn(tape, vars);
    tape.seal_corruption();
    Var loss = reduce(tape, out, weights_);
    tape.backward(loss);

    for (std::size_t k = 0; k < c.inputs.size(); ++k) {
      Input& in = c.inputs[k];
      if (!in.differentiable) continue;
      const Tensor64 analytic = tape.grad(vars[k]);
      const auto coords = pick(in.value.size(), c.probes_per_input);
      double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
      for (std::size_t i : coords) {
        const double saved = in.value[i];
        // A probe whose +h and -h points straddle a leaky-ReLU kink measures the
        // kink, not the derivative; retry such coordinates with a smaller step.
        double h = opts_.step;
        double numeric = 0.0;
        for (int attempt = 0;; ++attempt) {
          in.value[i] = saved + h;
          const Probe up = evaluate(c);
          in.value[i] = saved - h;
          const Probe down = evaluate(c);
          in.value[i] = saved;
          numeric = (up.value - down.value) / (2.0 * h);
          if (up.signs == down.signs || attempt == kMaxShrink) break;
          h *= 0.1;
          ++res.kink_retries;
        }
        diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
        a2 += analytic[i] * analytic[i];
        n2 += numeric * numeric;
      }
      res.probes += coords.size();
      const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
      double err = std::sqrt(diff2) / denom;
      if (!std::isfinite(err)) err = std::numeric_limits<double>::infinity();
      if (res.worst_input.empty() || err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_input = in.name;
      }
    }
    res.passed = std::isfinite(res.max_rel_error) && res.max_rel_error <= opts_.tolerance;
    return res;
  }

 private:
  static std::vector<Var> bind(Tape64& tape, const std::vector<Input>& inputs, bool track) {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (const auto& in : inputs) {
      vars.push_back(track && in.differentiable ? tape.parameter(in.value) : tape.constant(in.value));
    }
    return vars;
  }

  static Var reduce(Tape64& tape, Var out, const Tensor64& weights) {
    return sum(tape, mul(tape, out, tape.constant(weights)));
  }

  struct Probe {
    double value = 0.0;
    std::vector<bool> signs;
  };

  static constexpr int kMaxShrink = 3;

  static Probe evaluate(const Case& c, const Tensor64& weights) {
    Tape64 tape;
    auto vars = bind(tape, c.inputs, false);
    Probe p;
    p.value = tape.value(reduce(tape, c.fn(tape, vars), weights))[0];
    for (std::size_t id = 0; id < tape.size(); ++id) {
      if (tape.kind(Var{id}) != OpKind::LeakyRelu) continue;
      for (double v : tape.value(Var{id}).data()) p.signs.push_back(v >= 0.0);
    }
    return p;
  }

  Probe evaluate(const Case& c) const { return evaluate(c, weights_); }

  std::vector<std::size_t> pick(std::size_t size, std::size_t count) {
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (size <= count) return idx;
    for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng_.index(size - i)]);
    idx.resize(count);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  const GradCheckOptions& opts_;
  Rng& rng_;
  Tensor64 weights_;
};

template <class Build>
Case block_case(const std::string& name, Rng& rng, std::vector<Input> images, Build build, std::size_t probes) {
  ParamSet64 params;
  ParamBuilder<double> builder(params, &rng);
  auto layout = build(builder);
  // Nonzero biases so every path through the block is exercised.
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].tensor;
    if (t.shape().n == 1 && t.shape().h == 1 && t.shape().w == 1) {
      for (std::size_t k = 0; k < t.size(); ++k) t[k] = rng.uniform(-0.3, 0.3);
    }
  }
  const std::size_t n_images = images.size();
  Case c{name, std::move(images), {}, probes};
  for (const auto& e : params.entries()) c.inputs.push_back(param_input(e));
  return {c.name, std::move(c.inputs), [layout, n_images](Tape64& t, std::span<const Var> v) -> Var {
            BlockContext<Tape64> ctx{t, v.subspan(n_images), kDefaultLeakySlope};
            using L = decltype(layout);
            if constexpr (std::is_same_v<L, DsaBlock>) return dsa_forward(ctx, layout, v[0], v[1]);
            else if constexpr (std::is_same_v<L, ResDsaBlock>) return res_dsa_forward(ctx, layout, v[0]);
            else if constexpr (std::is_same_v<L, PcanBlock>) return pcan_forward(ctx, layout, v[0]);
            else if constexpr (std::is_same_v<L, MsacBlock>) return msac_forward(ctx, layout, v[0]);
            else return dsan_forward(ctx, layout, v[0]);
          },
          probes};
}

std::vector<Case> build_cases(Rng& rng) {
  std::vector<Case> cases;
  const Shape img{2, 3, 5, 6};

  cases.push_back({"conv2d",
                   {{"x", random_tensor(rng, Shape{2, 3, 7, 6})},
                    {"w", random_tensor(rng, Shape{4, 3, 3, 3})},
                    {"b", random_tensor(rng, Shape{1, 4, 1, 1})}},
                   [](Tape64& t, std::span<const Var> v) { return conv2d(t, v[0], v[1], v[2], ConvGeometry{2, 2, 2}); }});
  cases.push_back({"conv_transpose2d",
                   {{"x", random_tensor(rng, Shape{2, 3, 4, 3})},
                    {"w", random_tensor(rng, Shape{3, 2, 4, 4})},
                    {"b", random_tensor(rng, Shape{1, 2, 1, 1})}},
                   [](Tape64& t, std::span<const Var> v) {
                     return conv_transpose2d(t, v[0], v[1], v[2], ConvGeometry{2, 1, 1});
                   }});
  cases.push_back({"lrelu", {{"x", away_from_zero(rng, img)}}, [](Tape64& t, std::span<const Var> v) {
                     return activation(t, v[0], Activation::LeakyRelu);
                   }});
  cases.push_back({"tanh", {{"x", random_tensor(rng, img, -2.0, 2.0)}}, [](Tape64& t, std::span<const Var> v) {
                     return activation(t, v[0], Activation::Tanh);
                   }});
  cases.push_back({"sigmoid", {{"x", random_tensor(rng, img, -3.0, 3.0)}}, [](Tape64& t, std::span<const Var> v) {
                     return activation(t, v[0], Activation::Sigmoid);
                   }});
  cases.push_back({"add",
                   {{"a", random_tensor(rng, img)}, {"b", random_tensor(rng, img)}},
                   [](Tape64& t, std::span<const Var> v) { return add(t, v[0], v[1]); }});
  cases.push_back({"sub",
                   {{"a", random_tensor(rng, img)}, {"b", random_tensor(rng, img)}},
                   [](Tape64& t, std::span<const Var> v) { return sub(t, v[0], v[1]); }});
  cases.push_back({"mul",
                   {{"a", random_tensor(rng, img)}, {"b", random_tensor(rng, img)}},
                   [](Tape64& t, std::span<const Var> v) { return mul(t, v[0], v[1]); }});
  cases.push_back({"scale", {{"x", random_tensor(rng, img)}},
                   [](Tape64& t, std::span<const Var> v) { return scale(t, v[0], -1.75); }});
  cases.push_back({"abs", {{"x", away_from_zero(rng, img)}}, [](Tape64& t, std::span<const Var> v) { return abs(t, v[0]); }});
  cases.push_back({"concat",
                   {{"a", random_tensor(rng, Shape{2, 1, 4, 4})},
                    {"b", random_tensor(rng, Shape{2, 3, 4, 4})},
                    {"c", random_tensor(rng, Shape{2, 2, 4, 4})}},
                   [](Tape64& t, std::span<const Var> v) { return concat_channels(t, v); }});
  cases.push_back({"sum", {{"x", random_tensor(rng, img)}}, [](Tape64& t, std::span<const Var> v) { return sum(t, v[0]); }});
  cases.push_back({"ssim",
                   {{"x", random_tensor(rng, Shape{1, 2, 12, 13}, 0.0, 1.0)},
                    {"y", random_tensor(rng, Shape{1, 2, 12, 13}, 0.0, 1.0)}},
                   [](Tape64& t, std::span<const Var> v) { return ssim_map(t, v[0], v[1]); }});
  {
    // Keep |label - pred| away from zero so the L1 kink is not probed.
    Tensor64 label = random_tensor(rng, Shape{1, 1, 8, 8}, 0.0, 1.0);
    Tensor64 pred = label;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      pred[i] = std::clamp(label[i] + (rng.bernoulli(0.5) ? 1.0 : -1.0) * rng.uniform(0.05, 0.3), 0.0, 1.0);
      if (std::abs(pred[i] - label[i]) < 0.01) pred[i] = label[i] + (label[i] < 0.5 ? 0.2 : -0.2);
    }
    cases.push_back({"smoothing_loss",
                     {{"pred", pred}, {"label", label, false}},
                     [](Tape64& t, std::span<const Var> v) { return smoothing_loss(t, v[0], v[1]); },
                     64});
  }

  const std::size_t c = 3;
  cases.push_back(block_case("dsa", rng,
                             {{"s0", random_tensor(rng, Shape{1, c, 5, 5})}, {"s1", random_tensor(rng, Shape{1, c, 5, 5})}},
                             [&](ParamBuilder<double>& b) { return b.dsa("dsa", c); }, 6));
  cases.push_back(block_case("res_dsa", rng, {{"x", random_tensor(rng, Shape{1, c, 5, 5})}},
                             [&](ParamBuilder<double>& b) { return b.res_dsa("res", c); }, 6));
  cases.push_back(block_case("pcan", rng, {{"x", random_tensor(rng, Shape{1, 2, 9, 9})}},
                             [&](ParamBuilder<double>& b) { return b.pcan("pcan", 2); }, 6));
  cases.push_back(block_case("msac", rng, {{"x", random_tensor(rng, Shape{1, 2, 9, 9})}},
                             [&](ParamBuilder<double>& b) { return b.msac("msac", 2); }, 4));
  cases.push_back(block_case("dsan", rng, {{"image", random_tensor(rng, Shape{1, 1, 8, 8}, 0.0, 1.0)}},
                             [&](ParamBuilder<double>& b) { return b.dsan(DsanConfig{4, 1, kDefaultLeakySlope}); }, 3));
  return cases;
}

}  // namespace

std::vector<std::string> gradcheck_names() {
  Rng rng(0);
  std::vector<std::string> names;
  for (const auto& c : build_cases(rng)) names.push_back(c.name);
  return names;
}

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts) {
  Rng rng(opts.seed);
  auto cases = build_cases(rng);
  std::vector<GradCheckResult> out;
  Checker checker(opts, rng);
  for (auto& c : cases) {
    if (!opts.only.empty() && std::find(opts.only.begin(), opts.only.end(), c.name) == opts.only.end()) continue;
    out.push_back(checker.run(c));
  }
  return out;
}

std::string format_gradcheck_report(const std::vector<GradCheckResult>& results, const GradCheckOptions& opts) {
  std::ostringstream os;
  os << "check\tstatus\tmax_rel_error\tworst_input\tprobes\tkink_retries\n";
  std::size_t failed = 0;
  for (const auto& r : results) {
    char err[32];
    std::snprintf(err, sizeof err, "%.3e", r.max_rel_error);
    os << r.name << '\t' << (r.passed ? "PASS" : "FAIL") << '\t' << err << '\t' << r.worst_input << '\t' << r.probes
       << '\t' << r.kink_retries << '\n';
    if (!r.passed) ++failed;
  }
  os << "# seed " << opts.seed << ", step " << opts.step << ", tolerance " << opts.tolerance;
  if (opts.corrupt) os << ", corrupted backward: " << op_name(*opts.corrupt);
  os << "\n# " << (results.size() - failed) << "/" << results.size() << " passed";
  if (failed) {
    os << "; failing:";
    for (const auto& r : results) {
      if (!r.passed) os << ' ' << r.name;
    }
  }
  os << '\n';
  return os.str();
}

}  // namespace cei
