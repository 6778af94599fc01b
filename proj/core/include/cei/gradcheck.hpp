#pragma once

// Central finite-difference checks for every differentiable op and block.
//
// Each check builds a small random problem in double precision, reduces the
// output to a scalar with fixed random weights, and compares the tape gradient
// with (f(x+h) - f(x-h)) / 2h on a sample of coordinates of every input. The
// error of one input is ||analytic - numeric|| / max(||analytic||, ||numeric||)
// over its probed coordinates. Probes that straddle a leaky-ReLU kink are
// repeated with the step divided by 10 (at most three times).

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cei/autodiff.hpp"

namespace cei {

struct GradCheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-3;
  double tolerance = 1e-3;
  /// Fault injection: scale the upstream gradient of every node of this kind.
  std::optional<OpKind> corrupt;
  double corrupt_factor = 1.5;
  /// Restrict to checks whose name is in this list (empty = all).
  std::vector<std::string> only;
};

struct GradCheckResult {
  std::string name;
  /// Input with the largest error, e.g. "x" or "lfa.dsa.dcs1.left".
  std::string worst_input;
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  /// Probes repeated with a smaller step because they straddled a kink.
  std::size_t kink_retries = 0;
  bool passed = false;
};

/// Names of all checks in run order.
std::vector<std::string> gradcheck_names();

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts = {});

/// Tab-separated report: one line per check plus a summary line.
std::string format_gradcheck_report(const std::vector<GradCheckResult>& results, const GradCheckOptions& opts);

}  // namespace cei
