#include <cmath>

#include "cascade/patch_match.hpp"
#include "cascade/synth.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace cascade;
using cascade::testing::random_tensor;

namespace {

double ncc_oracle(const Tensor& t, const Tensor& w) {
  long double num = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < t.dim(1); ++i)
    for (std::size_t j = 0; j < t.dim(2); ++j) {
      num += (long double)t[i * t.dim(2) + j] * w[i * t.dim(2) + j];
      a += (long double)t[i * t.dim(2) + j] * t[i * t.dim(2) + j];
      b += (long double)w[i * t.dim(2) + j] * w[i * t.dim(2) + j];
    }
  return double(num / std::sqrt(a * b));
}

Tensor crop3(const Tensor& f, std::size_t y0, std::size_t x0, std::size_t p) {
  Tensor out({1, p, p});
  for (std::size_t y = 0; y < p; ++y)
    for (std::size_t x = 0; x < p; ++x) out[y * p + x] = f[(y0 + y) * f.dim(2) + x0 + x];
  return out;
}

VideoSequence shifted(double dx, double dy, std::uint64_t seed) {
  SynthSpec spec;
  spec.seed = seed;
  spec.height = 48;
  spec.width = 48;
  spec.motion = {dx, dy};
  return synth_sequence(spec);
}

}  // namespace

TEST_CASE("ncc_score: self, anti, oracle, invariances") {
  Tensor t = random_tensor({1, 6, 6}, 1), w = random_tensor({1, 6, 6}, 2);
  CHECK(std::abs(ncc_score(t, t) - 1.0) <= 1e-12);
  Tensor neg = t;
  for (double& v : neg.data()) v = -v;
  CHECK(std::abs(ncc_score(t, neg) + 1.0) <= 1e-12);
  const double ref = ncc_oracle(t, w);
  CHECK(std::abs(ncc_score(t, w) - ref) / std::abs(ref) < 1e-10);
  CHECK(std::abs(ncc_score(w, t) - ncc_score(t, w)) <= 1e-15);
  Tensor ts = t, ws = w;
  for (double& v : ts.data()) v *= 3.5;
  for (double& v : ws.data()) v *= 0.2;
  CHECK(std::abs(ncc_score(ts, ws) - ncc_score(t, w)) < 1e-10);
  CHECK_THROWS_AS(ncc_score(Tensor({1, 6, 6}), w), DomainError);
  CHECK_THROWS_AS(ncc_score(t, Tensor({1, 5, 6})), DimensionError);
}

TEST_CASE("match_patch recovers integer shifts") {
  for (int d = -3; d <= 3; ++d) {
    VideoSequence seq = shifted(d, -d / 2, 5 + d);
    const Tensor templ = crop3(seq.frames[0], 16, 16, 12);
    MatchScoreMap m = match_patch(templ, seq.frames[1], {16, 16}, 4);
    CHECK(long(m.best.x) - 16 == d);
    CHECK(long(m.best.y) - 16 == -d / 2);
    CHECK_FALSE(m.degenerate);

    Tensor scaled = seq.frames[1];
    for (double& v : scaled.data()) v *= 1.7;
    CHECK(match_patch(templ, scaled, {16, 16}, 4).best == m.best);
  }
}

TEST_CASE("match_patch boundaries") {
  VideoSequence seq = shifted(2, 0, 3);
  const Tensor templ = crop3(seq.frames[0], 10, 10, 8);
  CHECK(match_patch(templ, seq.frames[1], {10, 10}, 0).best == PixelPos{10, 10});

  MatchScoreMap flat = match_patch(templ, Tensor({1, 48, 48}, 0.5), {10, 10}, 3);
  CHECK(flat.degenerate);
  CHECK(flat.best == PixelPos{10, 10});
  MatchScoreMap zero = match_patch(Tensor({1, 8, 8}), seq.frames[1], {10, 10}, 3);
  CHECK(zero.degenerate);

  // Window clipped at the frame corner.
  MatchScoreMap corner = match_patch(templ, seq.frames[1], {0, 0}, 2);
  CHECK(corner.scores.shape() == Shape{3, 3});
  CHECK_THROWS_AS(match_patch(templ, Tensor({1, 6, 6}, 0.5), {0, 0}, 1),
                  ParameterError);
}

TEST_CASE("assemble_triplets: static, translation, tiling") {
  VideoSequence still = shifted(0, 0, 7);
  auto ts = assemble_triplets(still, still, 1, 16, 16, 3);
  CHECK(ts.size() == 9);
  for (const auto& t : ts) {
    CHECK(t.sup_origin[0] == t.ref_origin);
    CHECK(t.sup_origin[1] == t.ref_origin);
    CHECK(t.patch_size() == 16);
  }

  VideoSequence moving = shifted(2, 1, 8);
  auto tm = assemble_triplets(moving, moving, 1, 16, 16, 3);
  for (const auto& t : tm) {
    // Interior tiles only: edge tiles see clamped content.
    if (t.ref_origin.x < 16 || t.ref_origin.y < 16 || t.ref_origin.x > 16 ||
        t.ref_origin.y > 16)
      continue;
    CHECK(long(t.sup_origin[1].x) - long(t.ref_origin.x) == 2);
    CHECK(long(t.sup_origin[1].y) - long(t.ref_origin.y) == 1);
    CHECK(long(t.sup_origin[0].x) - long(t.ref_origin.x) == -2);
    CHECK(long(t.sup_origin[0].y) - long(t.ref_origin.y) == -1);
  }

  CHECK_THROWS_AS(assemble_triplets(still, still, 0, 16, 16, 3), ParameterError);
  CHECK_THROWS_AS(assemble_triplets(still, still, 1, 64, 16, 3), ParameterError);
  CHECK(tile_origins(40, 16, 16, false).size() == 2);
  CHECK(tile_origins(40, 16, 16, true).back() == 24);
}
