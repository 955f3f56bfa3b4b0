#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cascade/tensor.hpp"

namespace cascade {

struct GradCheckOptions {
  double tol = 1e-3;
  double step = 1e-3;
  /// Elements probed per input; inputs at or below this size are probed
  /// exhaustively.
  std::size_t max_probes = 64;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  std::vector<double> max_rel_error;  // one per leaf
  bool passed = false;
  std::string failure;  // empty when passed
};

/// Compares the analytic gradient of sum(R * forward()) against central
/// differences, where R is a fixed random projection. `forward` must read the
/// current values of `leaves` (they are perturbed in place and restored).
///
/// Per element the error is |analytic - numeric| / max(|analytic|, |numeric|,
/// 1e-3 * max|analytic over that leaf|).
GradCheckReport grad_check(const std::function<Var()>& forward,
                           std::vector<Var> leaves,
                           const GradCheckOptions& options = {});

/// Convenience form: wraps `inputs` as fresh leaves and passes them to `op`.
GradCheckReport grad_check(
    const std::function<Var(const std::vector<Var>&)>& op,
    const std::vector<Tensor>& inputs, const GradCheckOptions& options = {});

}  // namespace cascade
