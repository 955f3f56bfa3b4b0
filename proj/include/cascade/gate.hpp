#pragma once

#include <vector>

#include "cascade/tensor.hpp"

namespace cascade {

struct ExitPolicy {
  bool enabled = true;
  /// Mean sigma^2 threshold. 0 never exits early; +inf always exits at once.
  double threshold = 0.002;
  std::size_t max_iters = 12;
  /// Exit when the mean exceeds the threshold instead of falling below it.
  bool exit_on_high = false;

  /// Throws ParameterError for a negative/NaN threshold or max_iters == 0.
  void validate() const;
};

struct GateDecision {
  double mean_uncertainty = 0.0;
  bool exit = false;
  std::size_t iteration = 0;
};

enum class LossForm {
  /// ||s-g||_2 / (2 sigma^2) + ln(sigma^2) / 2
  Printed,
  /// ||s-g||_2 / sigma + ln(sigma)
  Laplace,
};

/// Per-pixel uncertainty loss averaged over pixels. `s` and `g` are
/// [B,C,H,W]; `log_var` is [B,1,H,W] holding ln sigma^2. The residual norm is
/// taken across channels.
Var eu_loss(const Var& s, const Var& g, const Var& log_var,
            LossForm form = LossForm::Printed);

/// sum_k gamma^(n-k) L_k for k = 1..losses.size(), where n is the configured
/// number of iterations.
double total_loss(const std::vector<double>& losses, double gamma,
                  std::size_t n);
Var total_loss(const std::vector<Var>& losses, double gamma, std::size_t n);

/// The exit rule on an already reduced mean sigma^2.
bool exit_condition(double mean_sigma2, const ExitPolicy& policy,
                    std::size_t iteration);

/// Gate on the mean of exp(u) over all pixels of one patch.
GateDecision decide_exit(const Tensor& log_var, const ExitPolicy& policy,
                         std::size_t iteration);

/// 1 - mean(exit iteration) / max_iters over the final decision of each patch.
double compute_savings(const std::vector<GateDecision>& final_decisions,
                       std::size_t max_iters);

}  // namespace cascade
