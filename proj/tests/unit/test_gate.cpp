#include <cmath>
#include <limits>

#include "cascade/gate.hpp"
#include "cascade/grad_check.hpp"
#include "cascade/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cascade;
using cascade::testing::random_tensor;

TEST_CASE("eu_loss: fixed values") {
  const Var s(Tensor({1, 1, 2, 2}, 0.3));
  const Var zero_u(Tensor({1, 1, 2, 2}, 0.0));
  CHECK(eu_loss(s, s, zero_u).item() == 0.0);
  CHECK(eu_loss(s, s, zero_u, LossForm::Laplace).item() == 0.0);

  const Var a(Tensor({1, 1, 1, 1}, 1.0)), b(Tensor({1, 1, 1, 1}, 0.0));
  const Var u1(Tensor({1, 1, 1, 1}, 0.0));
  CHECK(eu_loss(a, b, u1).item() == doctest::Approx(0.5).epsilon(1e-15));

  // Residual norm runs across channels: |(3,4)| = 5.
  Tensor three({1, 2, 1, 1});
  three[0] = 3.0;
  three[1] = 4.0;
  CHECK(eu_loss(Var(three), Var(Tensor({1, 2, 1, 1}, 0.0)), u1).item() ==
        doctest::Approx(2.5).epsilon(1e-15));

  CHECK_THROWS_AS(eu_loss(a, Var(Tensor({1, 1, 1, 2})), u1), DimensionError);
  CHECK_THROWS_AS(eu_loss(a, b, Var(Tensor({1, 2, 1, 1}))), DimensionError);
}

TEST_CASE("eu_loss: grid minimiser agrees with the stationary point") {
  const double e = 0.37;
  const Var s(Tensor({1, 1, 1, 1}, e)), g(Tensor({1, 1, 1, 1}, 0.0));
  for (LossForm form : {LossForm::Printed, LossForm::Laplace}) {
    // Printed: d/dv [e/(2v) + ln(v)/2] = 0 at v = e.
    // Laplace: d/ds [e/s + ln s] = 0 at s = e, so v = e^2.
    const double analytic = form == LossForm::Printed ? e : e * e;
    double best_v = 0.0, best = std::numeric_limits<double>::infinity();
    for (double lv = std::log(1e-3); lv < std::log(10.0); lv += 1e-4) {
      const double L = eu_loss(s, g, Var(Tensor({1, 1, 1, 1}, lv)), form).item();
      if (L < best) {
        best = L;
        best_v = std::exp(lv);
      }
    }
    CHECK(std::abs(best_v - analytic) / analytic < 0.01);
  }
}

TEST_CASE("eu_loss gradient in both forms") {
  for (LossForm form : {LossForm::Printed, LossForm::Laplace})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const std::size_t c = 1 + seed % 3, h = 2 + seed % 2, w = 3;
      auto r = grad_check(
          [form](const std::vector<Var>& v) { return eu_loss(v[0], v[1], v[2], form); },
          {random_tensor({1, c, h, w}, seed), random_tensor({1, c, h, w}, seed + 10),
           random_tensor({1, 1, h, w}, seed + 20, -2.0, 1.0)});
      CHECK_MESSAGE(r.passed, r.failure);
    }
}

TEST_CASE("total_loss") {
  CHECK(total_loss({1.0, 2.0, 3.0}, 1.0, 3) == 6.0);
  CHECK(total_loss({1.0, 1.0}, 0.8, 2) == 0.8 * 1.0 + 1.0);
  CHECK(total_loss(std::vector<double>{2.0}, 0.5, 4) == std::pow(0.5, 3) * 2.0);

  std::vector<double> losses{0.3, -1.2, 0.7, 2.5};
  std::vector<Var> vars;
  double direct = 0.0;
  for (std::size_t k = 0; k < losses.size(); ++k) {
    vars.emplace_back(Tensor({1}, losses[k]));
    direct += std::pow(0.8, double(4 - (k + 1))) * losses[k];
  }
  CHECK(total_loss(losses, 0.8, 4) == direct);
  CHECK(total_loss(vars, 0.8, 4).item() == direct);

  CHECK_THROWS_AS(total_loss(std::vector<double>{}, 0.8, 2), ParameterError);
  CHECK_THROWS_AS(total_loss(std::vector<double>{1.0}, 0.0, 2), ParameterError);
  CHECK_THROWS_AS(total_loss(std::vector<double>{1.0}, 1.5, 2), ParameterError);
  CHECK_THROWS_AS(total_loss({1.0, 1.0, 1.0}, 0.8, 2), ParameterError);
}

TEST_CASE("decide_exit") {
  ExitPolicy p;
  const Tensor low({1, 1, 2, 2}, std::log(0.001));
  const Tensor high({1, 1, 2, 2}, std::log(0.01));
  GateDecision d = decide_exit(low, p, 1);
  CHECK(d.exit);
  CHECK(d.mean_uncertainty == doctest::Approx(0.001));
  CHECK(d.iteration == 1);
  CHECK_FALSE(decide_exit(high, p, 1).exit);
  CHECK(decide_exit(high, p, p.max_iters).exit);

  ExitPolicy off = p;
  off.enabled = false;
  for (std::size_t k = 1; k < off.max_iters; ++k) CHECK_FALSE(decide_exit(low, off, k).exit);
  CHECK(decide_exit(low, off, off.max_iters).exit);

  ExitPolicy flip = p;
  flip.exit_on_high = true;
  CHECK(decide_exit(high, flip, 1).exit);
  CHECK_FALSE(decide_exit(low, flip, 1).exit);

  ExitPolicy never = p;
  never.threshold = 0.0;
  CHECK_FALSE(decide_exit(Tensor({1, 1, 1, 1}, -700.0), never, 1).exit);
  ExitPolicy always = p;
  always.threshold = std::numeric_limits<double>::infinity();
  CHECK(decide_exit(high, always, 1).exit);

  ExitPolicy bad = p;
  bad.threshold = -1.0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad.threshold = std::nan("");
  CHECK_THROWS_AS(bad.validate(), ParameterError);
  bad = p;
  bad.max_iters = 0;
  CHECK_THROWS_AS(bad.validate(), ParameterError);
}

TEST_CASE("compute_savings") {
  auto at = [](std::vector<std::size_t> its) {
    std::vector<GateDecision> d;
    for (std::size_t k : its) d.push_back({0.0, true, k});
    return d;
  };
  CHECK(compute_savings(at({12, 12, 12}), 12) == 0.0);
  CHECK(compute_savings(at({1, 1}), 12) == doctest::Approx(11.0 / 12.0));
  // Mean exit iteration 9.4 of 12.
  CHECK(compute_savings(at({9, 9, 9, 10, 10}), 12) == doctest::Approx(1.0 - 9.4 / 12.0));
  CHECK(compute_savings(at({9, 9, 9, 10, 10}), 12) == doctest::Approx(0.21667).epsilon(1e-4));
}

TEST_CASE("grad_check rejects a corrupted backward") {
  // Square with a backward that forgets the factor 2.
  auto bad_square = [](const std::vector<Var>& v) {
    Tensor out = v[0].value();
    for (double& x : out.data()) x *= x;
    const Var in = v[0];
    return detail::make_result(std::move(out), {in}, [in](detail::Node& self) {
      Tensor& g = in.grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * in.value()[i];
    });
  };
  const auto r = grad_check(bad_square, {random_tensor({1, 1, 3, 3}, 1, 0.5, 1.0)});
  CHECK_FALSE(r.passed);
  CHECK_FALSE(r.failure.empty());
  CHECK(r.max_rel_error[0] > 0.3);
}
