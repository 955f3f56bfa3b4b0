#include "cascade/gate.hpp"

#include <cmath>

namespace cascade {

void ExitPolicy::validate() const {
  if (std::isnan(threshold) || threshold < 0.0) {
    throw ParameterError("exit threshold must be >= 0, got " +
                         std::to_string(threshold));
  }
  if (max_iters == 0) throw ParameterError("max_iters must be >= 1");
}

Var eu_loss(const Var& s, const Var& g, const Var& log_var, LossForm form) {
  const Shape& ss = s.shape();
  if (ss != g.shape()) {
    throw DimensionError("eu_loss: prediction " + shape_str(ss) +
                         " vs target " + shape_str(g.shape()));
  }
  if (ss.size() != 4 || log_var.shape() != Shape{ss[0], 1, ss[2], ss[3]}) {
    throw DimensionError("eu_loss: uncertainty map " +
                         shape_str(log_var.shape()) + " does not match " +
                         shape_str(ss));
  }
  const std::size_t B = ss[0], C = ss[1], HW = ss[2] * ss[3];
  const std::size_t n = B * HW;
  const Tensor& sv = s.value();
  const Tensor& gv = g.value();
  const Tensor& uv = log_var.value();

  // Per pixel: norm e, and the weight w = d(loss)/de.
  std::vector<double> norm(n), weight(n);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t i = 0; i < HW; ++i) {
      double sq = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        const double d = sv[(b * C + c) * HW + i] - gv[(b * C + c) * HW + i];
        sq += d * d;
      }
      const std::size_t p = b * HW + i;
      const double u = uv[p];
      if (!std::isfinite(u)) {
        throw DomainError("eu_loss: non-finite log variance at pixel " +
                          std::to_string(p));
      }
      norm[p] = std::sqrt(sq);
      weight[p] = form == LossForm::Printed ? 0.5 * std::exp(-u) : std::exp(-0.5 * u);
      total += norm[p] * weight[p] + 0.5 * u;
    }
  }
  Tensor out({1}, total / static_cast<double>(n));

  return detail::make_result(
      std::move(out), {s, g, log_var},
      [s, g, log_var, norm = std::move(norm), weight = std::move(weight), B, C,
       HW, n, form](detail::Node& self) {
        const double seed = self.grad[0] / static_cast<double>(n);
        const Tensor& sv = s.value();
        const Tensor& gv = g.value();
        double* gs = s.requires_grad() ? s.grad_buffer().data().data() : nullptr;
        double* gg = g.requires_grad() ? g.grad_buffer().data().data() : nullptr;
        double* gu = log_var.requires_grad() ? log_var.grad_buffer().data().data() : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t i = 0; i < HW; ++i) {
            const std::size_t p = b * HW + i;
            if (gu) {
              // d/du of e*w(u): Printed w = e^{-u}/2 -> -e w; Laplace -> -e w / 2.
              const double k = form == LossForm::Printed ? 1.0 : 0.5;
              gu[p] += seed * (0.5 - k * norm[p] * weight[p]);
            }
            if (norm[p] == 0.0) continue;  // subgradient 0 at the kink
            const double f = seed * weight[p] / norm[p];
            for (std::size_t c = 0; c < C; ++c) {
              const std::size_t j = (b * C + c) * HW + i;
              const double d = f * (sv[j] - gv[j]);
              if (gs) gs[j] += d;
              if (gg) gg[j] -= d;
            }
          }
        }
      });
}

namespace {

void check_total_args(std::size_t count, double gamma, std::size_t n) {
  if (count == 0) throw ParameterError("total_loss: empty loss list");
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ParameterError("total_loss: gamma must be in (0, 1], got " +
                         std::to_string(gamma));
  }
  if (count > n) {
    throw ParameterError("total_loss: " + std::to_string(count) +
                         " losses exceed configured iterations " +
                         std::to_string(n));
  }
}

}  // namespace

double total_loss(const std::vector<double>& losses, double gamma,
                  std::size_t n) {
  check_total_args(losses.size(), gamma, n);
  double total = 0.0;
  for (std::size_t k = 1; k <= losses.size(); ++k)
    total += std::pow(gamma, static_cast<double>(n - k)) * losses[k - 1];
  return total;
}

Var total_loss(const std::vector<Var>& losses, double gamma, std::size_t n) {
  check_total_args(losses.size(), gamma, n);
  std::vector<double> w(losses.size());
  Tensor out({1}, 0.0);
  for (std::size_t k = 1; k <= losses.size(); ++k) {
    w[k - 1] = std::pow(gamma, static_cast<double>(n - k));
    out[0] += w[k - 1] * losses[k - 1].item();
  }
  return detail::make_result(std::move(out), losses,
                             [losses, w](detail::Node& self) {
                               for (std::size_t k = 0; k < losses.size(); ++k)
                                 if (losses[k].requires_grad())
                                   losses[k].grad_buffer()[0] += w[k] * self.grad[0];
                             });
}

bool exit_condition(double mean_sigma2, const ExitPolicy& policy,
                    std::size_t iteration) {
  if (iteration >= policy.max_iters) return true;
  if (!policy.enabled) return false;
  return policy.exit_on_high ? mean_sigma2 > policy.threshold
                             : mean_sigma2 < policy.threshold;
}

GateDecision decide_exit(const Tensor& log_var, const ExitPolicy& policy,
                         std::size_t iteration) {
  if (iteration == 0) throw ParameterError("decide_exit: iteration must be >= 1");
  policy.validate();
  GateDecision d;
  d.iteration = iteration;
  double sum = 0.0;
  for (double u : log_var.data()) sum += std::exp(u);
  d.mean_uncertainty = sum / static_cast<double>(log_var.numel());
  d.exit = exit_condition(d.mean_uncertainty, policy, iteration);
  return d;
}

double compute_savings(const std::vector<GateDecision>& final_decisions,
                       std::size_t max_iters) {
  if (final_decisions.empty()) throw ParameterError("compute_savings: no decisions");
  if (max_iters == 0) throw ParameterError("compute_savings: max_iters must be >= 1");
  double sum = 0.0;
  for (const auto& d : final_decisions) {
    if (d.iteration == 0 || d.iteration > max_iters) {
      throw ParameterError("compute_savings: exit iteration " +
                           std::to_string(d.iteration) + " outside [1, " +
                           std::to_string(max_iters) + "]");
    }
    sum += static_cast<double>(d.iteration);
  }
  return 1.0 - sum / static_cast<double>(final_decisions.size()) /
                   static_cast<double>(max_iters);
}

}  // namespace cascade
