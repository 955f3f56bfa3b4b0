#include "cascade/grad_check.hpp"

#include "cascade/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace cascade {

namespace {

double projected(const std::function<Var()>& forward, const Tensor& proj) {
  NoGradGuard guard;
  Var out = forward();
  double s = 0.0;
  for (std::size_t i = 0; i < proj.numel(); ++i) s += out.value()[i] * proj[i];
  return s;
}

}  // namespace

GradCheckReport grad_check(const std::function<Var()>& forward,
                           std::vector<Var> leaves,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  for (auto& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }

  Tensor proj;
  {
    Var out = forward();
    proj = Tensor(out.shape());
    for (double& v : proj.data()) v = normal(rng);
    Var loss = weighted_sum(out, proj);
    loss.backward();
  }

  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Var& leaf = leaves[li];
    const std::size_t n = leaf.numel();
    Tensor analytic = leaf.grad().empty() ? Tensor(leaf.shape(), 0.0) : leaf.grad();
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(analytic[i])) {
        std::ostringstream os;
        os << "non-finite analytic gradient at input " << li << " element "
           << i;
        report.failure = os.str();
        report.max_rel_error.push_back(INFINITY);
        return report;
      }
    }

    std::vector<std::size_t> probes(n);
    std::iota(probes.begin(), probes.end(), std::size_t{0});
    if (n > options.max_probes) {
      std::shuffle(probes.begin(), probes.end(), rng);
      probes.resize(options.max_probes);
      std::sort(probes.begin(), probes.end());
    }

    const double floor = 1e-3 * analytic.max_abs();
    double worst = 0.0;
    for (std::size_t idx : probes) {
      double& x = leaf.mutable_value()[idx];
      const double saved = x;
      x = saved + options.step;
      const double up = projected(forward, proj);
      x = saved - options.step;
      const double down = projected(forward, proj);
      x = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      if (!std::isfinite(numeric)) {
        std::ostringstream os;
        os << "non-finite numeric gradient at input " << li << " element "
           << idx;
        report.failure = os.str();
        report.max_rel_error.push_back(INFINITY);
        return report;
      }
      const double a = analytic[idx];
      const double denom =
          std::max({std::abs(a), std::abs(numeric), floor, 1e-300});
      const double err = (a == numeric) ? 0.0 : std::abs(a - numeric) / denom;
      worst = std::max(worst, err);
    }
    report.max_rel_error.push_back(worst);
  }

  report.passed = true;
  for (std::size_t li = 0; li < report.max_rel_error.size(); ++li) {
    if (!(report.max_rel_error[li] < options.tol)) {
      report.passed = false;
      std::ostringstream os;
      os << "input " << li << ": max relative error "
         << report.max_rel_error[li] << " >= tol " << options.tol;
      report.failure = os.str();
      break;
    }
  }
  return report;
}

GradCheckReport grad_check(
    const std::function<Var(const std::vector<Var>&)>& op,
    const std::vector<Tensor>& inputs, const GradCheckOptions& options) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(Var::leaf(t));
  return grad_check([&op, &leaves]() { return op(leaves); }, leaves, options);
}

}  // namespace cascade
