#include <cmath>
#include <limits>

#include "cascade/grad_check.hpp"
#include "cascade/ops.hpp"
#include "cascade/recon.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cascade;
using cascade::testing::max_abs_diff;
using cascade::testing::random_tensor;

namespace {

ReconConfig small_config() {
  ReconConfig c;
  c.features = 4;
  c.groups = 2;
  c.fusion_blocks = 1;
  return c;
}

Var patch(std::uint64_t seed, std::size_t p = 8, std::size_t c = 1) {
  return Var(random_tensor({1, c, p, p}, seed, 0.0, 1.0));
}

GradCheckOptions fine() {
  GradCheckOptions o;
  o.step = 1e-6;
  return o;
}

void zero(ParamSet& ps, const std::string& name) {
  for (double& v : ps.get(name).mutable_value().data()) v = 0.0;
}

}  // namespace

TEST_CASE("extract: shape, determinism, gradient") {
  ParamSet ps;
  std::mt19937_64 rng(1);
  ReconConfig cfg;
  cfg.channels = 3;
  ReconNet net(ps, cfg, rng);
  const Var a = patch(2, 32, 3), b = patch(3, 32, 3);
  const Var m = net.extract(a, b);
  CHECK(m.shape() == Shape{1, 32, 32, 32});
  CHECK(net.extract(a, b).value().vec() == m.value().vec());
  CHECK_THROWS_AS(net.extract(a, patch(4, 32, 1)), DimensionError);
  for (const auto& [name, p] : ps) CHECK(name.rfind("recon/", 0) == 0);

  ParamSet small;
  ReconNet snet(small, small_config(), rng);
  std::vector<Var> leaves{Var::leaf(random_tensor({1, 1, 6, 6}, 5, 0.0, 1.0)),
                          Var::leaf(random_tensor({1, 1, 6, 6}, 6, 0.0, 1.0)),
                          small.get("recon/feat1.w"), small.get("recon/feat2.w")};
  auto r = grad_check([&] { return snet.extract(leaves[0], leaves[1]); }, leaves, fine());
  CHECK_MESSAGE(r.passed, r.failure);
}

TEST_CASE("warp_features: identity, integer shift, flow gradient") {
  Tensor ramp({1, 2, 5, 6});
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) ramp[(c * 5 + y) * 6 + x] = double(x) + 10.0 * c;
  const Var m(ramp);
  CHECK(ReconNet::warp_features(m, Var(Tensor({1, 2, 5, 6}, 0.0))).value().vec() == ramp.vec());

  Tensor flow({1, 2, 5, 6}, 0.0);
  for (std::size_t i = 0; i < 30; ++i) flow[i] = 1.0;
  const Tensor shifted = ReconNet::warp_features(m, Var(flow)).value();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x + 1 < 6; ++x)
        CHECK(shifted[(c * 5 + y) * 6 + x] == ramp[(c * 5 + y) * 6 + x + 1]);

  auto r = grad_check(
      [](const std::vector<Var>& v) { return ReconNet::warp_features(v[0], v[1]); },
      {random_tensor({1, 2, 5, 6}, 7), random_tensor({1, 2, 5, 6}, 8, -1.3, 1.3)});
  CHECK_MESSAGE(r.passed, r.failure);
}

TEST_CASE("DCN alignment degeneracies") {
  ParamSet ps;
  std::mt19937_64 rng(2);
  const ReconConfig cfg = small_config();
  ReconNet net(ps, cfg, rng);
  const Var m(random_tensor({1, 4, 6, 6}, 9));
  const std::size_t K = cfg.taps();

  const Tensor dcn = net.deform(m, Var(Tensor({1, 2 * K, 6, 6}, 0.0)),
                                Var(Tensor({1, K, 6, 6}, 1.0)))
                         .value();
  const Tensor conv = conv2d(m, ps.get("recon/dcn.w"), ps.get("recon/dcn.b"), 1, 1).value();
  CHECK(cascade::testing::max_rel_diff(dcn, conv) < 1e-9);

  const Tensor masked = net.deform(m, Var(random_tensor({1, 2 * K, 6, 6}, 10)),
                                   Var(Tensor({1, K, 6, 6}, 0.0)))
                            .value();
  const Tensor& bias = ps.get("recon/dcn.b").value();
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 36; ++i) CHECK(masked[c * 36 + i] == bias[c]);

  // Offsets are the flow plus a learned residual; with the residual
  // branch zeroed and the mask saturated the flow alone places the taps.
  zero(ps, "recon/off2.w");
  zero(ps, "recon/off2.b");
  for (std::size_t k = 2 * K; k < 3 * K; ++k) ps.get("recon/off2.b").mutable_value()[k] = 60.0;
  const Var flow(random_tensor({1, 2, 6, 6}, 11, -1.0, 1.0));
  const Var r(random_tensor({1, 4, 6, 6}, 12));
  const Tensor guided =
      net.flow_guided_dcn(m, ReconNet::warp_features(m, flow), r, flow).value();
  const Tensor direct =
      net.deform(m, tile_channels(flow, K), Var(Tensor({1, K, 6, 6}, 1.0))).value();
  CHECK(max_abs_diff(guided, direct) < 1e-12);
}

TEST_CASE("flow_guided_dcn gradient") {
  ParamSet ps;
  std::mt19937_64 rng(3);
  ReconNet net(ps, small_config(), rng);
  // Give the residual-offset branch non-zero weights so its path is exercised.
  ps.get("recon/off2.w").mutable_value() = random_tensor(ps.get("recon/off2.w").shape(), 13, -0.1, 0.1);
  std::vector<Var> leaves{Var::leaf(random_tensor({1, 4, 4, 4}, 14)),
                          Var::leaf(random_tensor({1, 4, 4, 4}, 15)),
                          Var::leaf(random_tensor({1, 2, 4, 4}, 16, -0.7, 0.7)),
                          ps.get("recon/off2.w"), ps.get("recon/dcn.w"), ps.get("recon/off1.w")};
  auto r = grad_check(
      [&] {
        const Var warped = ReconNet::warp_features(leaves[0], leaves[2]);
        return net.flow_guided_dcn(leaves[0], warped, leaves[1], leaves[2]);
      },
      leaves, fine());
  CHECK_MESSAGE(r.passed, r.failure);
}

TEST_CASE("fuse: shape, gradient, residual degeneracy") {
  ParamSet ps;
  std::mt19937_64 rng(5);
  ReconNet net(ps, small_config(), rng);
  const Var a(random_tensor({1, 4, 5, 5}, 17)), r(random_tensor({1, 4, 5, 5}, 18)),
      b(random_tensor({1, 4, 5, 5}, 19));
  CHECK(net.fuse(a, r, b).shape() == r.shape());
  CHECK_THROWS_AS(net.fuse(a, r, Var(Tensor({1, 4, 5, 4}))), DimensionError);

  std::vector<Var> leaves{Var::leaf(a.value()), Var::leaf(r.value()), Var::leaf(b.value()),
                          ps.get("recon/fuse_in.w"), ps.get("recon/res0a.w"),
                          ps.get("recon/res0b.w")};
  auto g = grad_check([&] { return net.fuse(leaves[0], leaves[1], leaves[2]); }, leaves, fine());
  CHECK_MESSAGE(g.passed, g.failure);

  for (const char* n : {"recon/res0a.w", "recon/res0a.b", "recon/res0b.w", "recon/res0b.b"})
    zero(ps, n);
  const Tensor proj = conv2d(concat_channels({a, r, b}), ps.get("recon/fuse_in.w"),
                             ps.get("recon/fuse_in.b"), 1, 1)
                          .value();
  CHECK(net.fuse(a, r, b).value().vec() == proj.vec());
}

TEST_CASE("heads: positivity, shapes, gradient") {
  ParamSet ps;
  std::mt19937_64 rng(6);
  ReconConfig cfg = small_config();
  cfg.channels = 3;
  ReconNet net(ps, cfg, rng);
  const Var r(random_tensor({1, 4, 6, 6}, 20, -3.0, 3.0));
  const Var pre = patch(21, 6, 3);
  const auto [s, u] = net.heads(r, pre);
  CHECK(s.shape() == pre.shape());
  CHECK(u.shape() == Shape{1, 1, 6, 6});
  for (double v : u.value().data()) CHECK(std::exp(v) > 0.0);

  std::vector<Var> leaves{Var::leaf(r.value()), ps.get("recon/s1.w"), ps.get("recon/s2.w"),
                          ps.get("recon/u1.w"), ps.get("recon/u2.w")};
  auto g = grad_check(
      [&] {
        const auto [s2, u2] = net.heads(leaves[0], pre);
        return concat_channels({s2, u2});
      },
      leaves, fine());
  CHECK_MESSAGE(g.passed, g.failure);
}

TEST_CASE("run_cascade: iteration counts and flow sources") {
  ParamSet ps;
  std::mt19937_64 rng(7);
  FlowConfig fc;
  fc.feature_dim = 4;
  fc.context_dim = 3;
  fc.hidden_dim = 4;
  fc.radius = 1;
  FlowNet flow(ps, fc, rng);
  ReconNet net(ps, small_config(), rng);
  PatchTriplet t;
  t.ref_pre = patch(30, 16);
  t.ref_noisy = patch(31, 16);
  t.sup_pre = {patch(32, 16), patch(33, 16)};
  t.sup_noisy = {patch(34, 16), patch(35, 16)};

  ExitPolicy off;
  off.enabled = false;
  off.max_iters = 4;
  const auto full = run_cascade(t, lazy_flows(flow, t), net, off);
  REQUIRE(full.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(full[k].decision.iteration == k + 1);
    CHECK(full[k].s.shape() == t.ref_pre.shape());
    CHECK(full[k].flows[0].iteration == k + 1);
  }
  CHECK(full.back().decision.exit);

  // Precomputed and lazy flow give the same outputs.
  const auto pre = run_cascade(t, precomputed_flows(flow.refine_flow(t, 4)), net, off);
  for (std::size_t k = 0; k < 4; ++k) CHECK(pre[k].s.value().vec() == full[k].s.value().vec());
  CHECK_THROWS_AS(run_cascade(t, precomputed_flows(flow.refine_flow(t, 2)), net, off),
                  ParameterError);

  ExitPolicy always;
  always.threshold = std::numeric_limits<double>::infinity();
  always.max_iters = 4;
  CHECK(run_cascade(t, lazy_flows(flow, t), net, always).size() == 1);

  ExitPolicy never;
  never.threshold = 0.0;
  never.max_iters = 4;
  const auto gated = run_cascade(t, lazy_flows(flow, t), net, never);
  REQUIRE(gated.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) CHECK(gated[k].s.value().vec() == full[k].s.value().vec());

  const ReconConfig back = ReconNet::infer_config(ps);
  CHECK(back.features == 4);
  CHECK(back.groups == 2);
  CHECK(back.fusion_blocks == 1);
}
