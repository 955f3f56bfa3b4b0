#include "cascade/grad_check.hpp"
#include "cascade/predenoise.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cascade;

TEST_CASE("pre-denoiser shape contract") {
  ParamSet ps;
  std::mt19937_64 rng(1);
  PreDenoiser net(ps, {}, rng);
  Tensor zero({1, 16, 12});
  Tensor out = net.predenoise(zero);
  CHECK(out.shape() == zero.shape());
  CHECK(out.all_finite());
  CHECK_THROWS_AS(net.predenoise(Tensor({1, 10, 12})), DimensionError);
  CHECK(net.predenoise(zero).vec() == out.vec());
  for (const auto& [name, p] : ps) CHECK(name.rfind("pre/", 0) == 0);
}

TEST_CASE("pre-denoiser gradient") {
  ParamSet ps;
  std::mt19937_64 rng(2);
  PreDenoiser net(ps, {1, 1, 2}, rng);
  GradCheckOptions opt;
  opt.step = 1e-6;
  std::vector<Var> leaves{Var::leaf(cascade::testing::random_tensor({1, 1, 4, 4}, 3))};
  for (auto& [name, p] : ps) leaves.push_back(p);
  auto r = grad_check([&] { return net.forward(leaves[0]); }, leaves, opt);
  CHECK_MESSAGE(r.passed, r.failure);
}
