#include <cmath>

#include "cascade/grad_check.hpp"
#include "cascade/ops.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cascade;
using cascade::testing::max_rel_diff;
using cascade::testing::random_tensor;

namespace {

// Direct six-loop convolution.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b,
                   std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), k = w.dim(2);
  const std::size_t Ho = (H + 2 * pad - k) / stride + 1;
  const std::size_t Wo = (W + 2 * pad - k) / stride + 1;
  Tensor out({B, O, Ho, Wo});
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) {
          double s = b.empty() ? 0.0 : b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t u = 0; u < k; ++u)
              for (std::size_t v = 0; v < k; ++v) {
                const long y = long(i * stride + u) - long(pad);
                const long xx = long(j * stride + v) - long(pad);
                if (y < 0 || xx < 0 || y >= long(H) || xx >= long(W)) continue;
                s += w[((o * C + c) * k + u) * k + v] *
                     x[((n * C + c) * H + y) * W + xx];
              }
          out[((n * O + o) * Ho + i) * Wo + j] = s;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d matches direct loops") {
  for (std::size_t stride : {1u, 2u}) {
    Tensor x = random_tensor({2, 3, 8, 6}, 1);
    Tensor w = random_tensor({4, 3, 3, 3}, 2);
    Tensor b = random_tensor({4}, 3);
    Var out = conv2d(Var(x), Var(w), Var(b), stride, 1);
    CHECK(max_rel_diff(out.value(), conv_oracle(x, w, b, stride, 1)) < 1e-12);
  }
}

TEST_CASE("conv2d rejects mismatched channels") {
  Var x(Tensor({1, 3, 4, 4}));
  Var w(Tensor({2, 2, 3, 3}));
  CHECK_THROWS_AS(conv2d(x, w, Var(), 1, 1), DimensionError);
}

TEST_CASE("conv2d gradient") {
  GradCheckOptions opt;
  for (std::uint64_t s = 0; s < 3; ++s) {
    opt.seed = s;
    auto r = grad_check(
        [s](const std::vector<Var>& v) { return conv2d(v[0], v[1], v[2], 1 + s % 2, 1); },
        {random_tensor({1, 2, 6, 6}, s), random_tensor({3, 2, 3, 3}, s + 10),
         random_tensor({3}, s + 20)},
        opt);
    CHECK_MESSAGE(r.passed, r.failure);
  }
}

TEST_CASE("pointwise activations and their gradients") {
  Var x(Tensor({1, 1, 1, 3}, {-1.0, 0.5, 2.0}));
  CHECK(sigmoid(x).value()[0] == doctest::Approx(1.0 / (1.0 + std::exp(1.0))));
  CHECK(relu(x).value()[0] == 0.0);
  CHECK(tanh(x).value()[2] == doctest::Approx(std::tanh(2.0)));
  CHECK_THROWS_AS(log(x), DomainError);
  GradCheckOptions opt;
  opt.step = 1e-6;
  for (Pointwise kind : {Pointwise::Sigmoid, Pointwise::Tanh, Pointwise::Relu,
                         Pointwise::Exp}) {
    auto r = grad_check(
        [kind](const std::vector<Var>& v) { return pointwise(v[0], kind); },
        {random_tensor({2, 3, 4, 4}, 7)}, opt);
    CHECK_MESSAGE(r.passed, r.failure);
  }
  auto r = grad_check([](const std::vector<Var>& v) { return log(v[0]); },
                      {random_tensor({1, 2, 3, 3}, 8, 0.5, 2.0)}, opt);
  CHECK_MESSAGE(r.passed, r.failure);
}

TEST_CASE("bilinear_sample: identity grid is exact, integer shift is a column shift") {
  Tensor img = random_tensor({1, 2, 5, 7}, 4);
  Var id(identity_grid(1, 5, 7));
  CHECK(bilinear_sample(Var(img), id).value().vec() == img.vec());

  Tensor flow({1, 2, 5, 7});
  for (std::size_t i = 0; i < 35; ++i) flow[i] = 1.0;  // x += 1
  Tensor out = warp(Var(img), Var(flow)).value();
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 7; ++x) {
        const std::size_t src = std::min<std::size_t>(x + 1, 6);
        CHECK(out.at(0, c, y, x) == img.at(0, c, y, src));
      }
}

TEST_CASE("bilinear_sample gradient in input and coordinates") {
  GradCheckOptions opt;
  opt.step = 1e-6;
  for (std::uint64_t s = 0; s < 3; ++s) {
    Tensor coords = random_tensor({1, 2, 4, 5}, s + 30, 0.2, 4.8);
    auto r = grad_check(
        [](const std::vector<Var>& v) { return bilinear_sample(v[0], v[1]); },
        {random_tensor({1, 3, 6, 6}, s), coords}, opt);
    CHECK_MESSAGE(r.passed, r.failure);
  }
}

TEST_CASE("avg_pool2 and upsample2") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 6});
  CHECK(avg_pool2(Var(x)).value()[0] == 3.0);
  CHECK_THROWS_AS(avg_pool2(Var(Tensor({1, 1, 3, 2}))), DimensionError);
  Tensor c({1, 1, 2, 2}, 0.25);
  const Tensor up = upsample2(Var(c)).value();
  for (double v : up.data()) CHECK(v == 0.25);
  GradCheckOptions opt;
  auto r = grad_check([](const std::vector<Var>& v) { return avg_pool2(v[0]); },
                      {random_tensor({2, 2, 4, 6}, 9)}, opt);
  CHECK_MESSAGE(r.passed, r.failure);
  r = grad_check([](const std::vector<Var>& v) { return upsample2(v[0]); },
                 {random_tensor({1, 2, 3, 4}, 10)}, opt);
  CHECK_MESSAGE(r.passed, r.failure);
}

TEST_CASE("layout ops round-trip and differentiate") {
  Tensor a = random_tensor({1, 2, 3, 3}, 11), b = random_tensor({1, 3, 3, 3}, 12);
  Var cat = concat_channels({Var(a), Var(b)});
  CHECK(cat.dim(1) == 5);
  CHECK(slice_channels(cat, 2, 3).value().vec() == b.vec());
  CHECK(tile_channels(Var(a), 3).dim(1) == 6);
  CHECK(crop(Var(b), 1, 1, 2, 2).value().at(0, 2, 0, 0) == b.at(0, 2, 1, 1));
  GradCheckOptions opt;
  auto r = grad_check(
      [](const std::vector<Var>& v) {
        Var c = concat_channels({v[0], tile_channels(v[1], 2)});
        return mul(crop(c, 0, 1, 2, 2), crop(c, 1, 0, 2, 2));
      },
      {a, random_tensor({1, 1, 3, 3}, 13)}, opt);
  CHECK_MESSAGE(r.passed, r.failure);
}

TEST_CASE("corr_volume matches quadruple loop and is symmetric") {
  Tensor f1 = random_tensor({1, 5, 4, 6}, 14), f2 = random_tensor({1, 5, 4, 6}, 15);
  Tensor c12 = corr_volume(Var(f1), Var(f2)).value();
  Tensor c21 = corr_volume(Var(f2), Var(f1)).value();
  const std::size_t h = 4, w = 6;
  double worst = 0.0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (std::size_t k = 0; k < h; ++k)
        for (std::size_t l = 0; l < w; ++l) {
          double s = 0.0;
          for (std::size_t d = 0; d < 5; ++d) s += f1.at(0, d, i, j) * f2.at(0, d, k, l);
          const double got = c12.at(i * w + j, 0, k, l);
          worst = std::max(worst, std::abs(got - s) / std::max(std::abs(s), 1e-12));
          CHECK(std::abs(got - c21.at(k * w + l, 0, i, j)) <= 1e-12);
        }
  CHECK(worst < 1e-10);
}

TEST_CASE("corr_lookup at integer flow indexes the volume directly") {
  const std::size_t h = 4, w = 4, r = 1;
  Tensor vol = random_tensor({h * w, 1, h, w}, 16);
  Tensor flow({1, 2, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    flow[i] = (i % 3 == 0) ? 1.0 : 0.0;
    flow[h * w + i] = (i % 5 == 0) ? -1.0 : 0.0;
  }
  Tensor out = corr_lookup({Var(vol)}, Var(flow), r).value();
  CHECK(out.dim(1) == 9);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j)
      for (long dy = -1; dy <= 1; ++dy)
        for (long dx = -1; dx <= 1; ++dx) {
          const long y = std::clamp<long>(long(i) + long(flow.at(0, 1, i, j)) + dy, 0, h - 1);
          const long x = std::clamp<long>(long(j) + long(flow.at(0, 0, i, j)) + dx, 0, w - 1);
          const std::size_t ch = (dy + 1) * 3 + (dx + 1);
          CHECK(out.at(0, ch, i, j) == vol.at(i * w + j, 0, y, x));
        }
}

TEST_CASE("corr_lookup gradient") {
  GradCheckOptions opt;
  opt.step = 1e-6;
  Tensor flow = random_tensor({1, 2, 4, 4}, 17, -1.3, 1.3);
  auto r = grad_check(
      [](const std::vector<Var>& v) {
        Var vol = corr_volume(v[0], v[1]);
        return corr_lookup({vol, avg_pool2(vol)}, v[2], 2);
      },
      {random_tensor({1, 3, 4, 4}, 18), random_tensor({1, 3, 4, 4}, 19), flow},
      opt);
  CHECK_MESSAGE(r.passed, r.failure);
}

TEST_CASE("deform_conv2d degenerates to conv2d with zero offsets and unit mask") {
  Tensor x = random_tensor({1, 4, 5, 6}, 20), w = random_tensor({3, 4, 3, 3}, 21);
  Tensor b = random_tensor({3}, 22);
  const std::size_t G = 2;
  Var off(Tensor({1, 2 * G * 9, 5, 6}, 0.0));
  Var mask(Tensor({1, G * 9, 5, 6}, 1.0));
  Tensor d = deform_conv2d(Var(x), off, mask, Var(w), Var(b), G).value();
  CHECK(max_rel_diff(d, conv2d(Var(x), Var(w), Var(b), 1, 1).value()) < 1e-9);

  Var zero_mask(Tensor({1, G * 9, 5, 6}, 0.0));
  const Tensor masked = deform_conv2d(Var(x), off, zero_mask, Var(w), Var(), G).value();
  for (double v : masked.data()) CHECK(v == 0.0);
}

TEST_CASE("deform_conv2d single tap equals bilinear sampling at the offset") {
  Tensor x = random_tensor({1, 2, 5, 5}, 23);
  Tensor w({2, 2, 1, 1}, {1, 0, 0, 1});
  Tensor off = random_tensor({1, 2, 5, 5}, 24, -0.9, 0.9);
  // Keep sampling points inside so zero padding and clamping agree.
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x0 = 0; x0 < 5; ++x0) {
      if (x0 == 0 || x0 == 4) off[(0 * 5 + y) * 5 + x0] = 0.0;
      if (y == 0 || y == 4) off[(1 * 5 + y) * 5 + x0] = 0.0;
    }
  Tensor out = deform_conv2d(Var(x), Var(off), Var(Tensor({1, 1, 5, 5}, 1.0)),
                             Var(w), Var(), 1)
                   .value();
  Tensor ref = warp(Var(x), Var(off)).value();
  CHECK(max_rel_diff(out, ref) < 1e-12);
}

TEST_CASE("deform_conv2d gradient") {
  GradCheckOptions opt;
  opt.step = 1e-6;
  for (std::uint64_t s = 0; s < 2; ++s) {
    const std::size_t G = 2;
    auto r = grad_check(
        [](const std::vector<Var>& v) {
          return deform_conv2d(v[0], v[1], sigmoid(v[2]), v[3], v[4], 2);
        },
        {random_tensor({1, 4, 5, 5}, s), random_tensor({1, 2 * G * 9, 5, 5}, s + 1, -1.5, 1.5),
         random_tensor({1, G * 9, 5, 5}, s + 2), random_tensor({3, 4, 3, 3}, s + 3),
         random_tensor({3}, s + 4)},
        opt);
    CHECK_MESSAGE(r.passed, r.failure);
  }
}

TEST_CASE("reductions") {
  Var a(Tensor({1, 1, 1, 2}, {1.0, 3.0})), b(Tensor({1, 1, 1, 2}, {0.0, 1.0}));
  CHECK(mse_loss(a, b).item() == doctest::Approx(2.5));
  CHECK(l1_loss(a, b).item() == doctest::Approx(1.5));
  CHECK(weighted_sum(a, Tensor({1, 1, 1, 2}, {2.0, -1.0})).item() == -1.0);
}

TEST_CASE("backward accumulates into shared leaves") {
  Var p = Var::leaf(Tensor({1}, {2.0}));
  Var y = mul(p, p);
  y.backward();
  CHECK(p.grad()[0] == 4.0);
  Var z = mul(p, p);
  z.backward();
  CHECK(p.grad()[0] == 8.0);
  p.zero_grad();
  {
    NoGradGuard guard;
    Var q = mul(p, p);
    CHECK_FALSE(q.requires_grad());
  }
}
