#include "cascade/patch_match.hpp"

#include <cmath>
#include <limits>

#include "cascade/ops.hpp"

namespace cascade {

double ncc_score(const Tensor& templ, const Tensor& window) {
  if (templ.shape() != window.shape()) {
    throw DimensionError("ncc_score: template " + shape_str(templ.shape()) +
                         " vs window " + shape_str(window.shape()));
  }
  double cross = 0.0, tt = 0.0, ww = 0.0;
  for (std::size_t i = 0; i < templ.numel(); ++i) {
    cross += templ[i] * window[i];
    tt += templ[i] * templ[i];
    ww += window[i] * window[i];
  }
  if (tt == 0.0) throw DomainError("ncc_score: zero-energy template");
  if (ww == 0.0) throw DomainError("ncc_score: zero-energy window");
  return std::clamp(cross / std::sqrt(tt * ww), -1.0, 1.0);
}

Tensor gray_projection(const Tensor& frame) {
  if (frame.rank() != 3) {
    throw DimensionError("gray_projection: expected [C,H,W], got " +
                         shape_str(frame.shape()));
  }
  const std::size_t C = frame.dim(0), HW = frame.dim(1) * frame.dim(2);
  Tensor out({1, frame.dim(1), frame.dim(2)});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i) out[i] += frame[c * HW + i];
  for (double& v : out.data()) v /= static_cast<double>(C);
  return out;
}

MatchScoreMap match_patch(const Tensor& ref_patch, const Tensor& sup_frame,
                          PixelPos origin, std::size_t radius) {
  if (ref_patch.rank() != 3 || sup_frame.rank() != 3 ||
      ref_patch.dim(0) != sup_frame.dim(0) || ref_patch.dim(1) != ref_patch.dim(2)) {
    throw DimensionError("match_patch: patch " + shape_str(ref_patch.shape()) +
                         " incompatible with frame " +
                         shape_str(sup_frame.shape()));
  }
  const std::size_t C = sup_frame.dim(0), H = sup_frame.dim(1), W = sup_frame.dim(2);
  const std::size_t p = ref_patch.dim(1);
  if (p > H || p > W) {
    throw ParameterError("match_patch: patch " + std::to_string(p) +
                         " larger than frame " + std::to_string(W) + "x" +
                         std::to_string(H));
  }
  const auto lo = [radius](std::size_t c) { return c > radius ? c - radius : 0; };
  const std::size_t x_lo = lo(origin.x), y_lo = lo(origin.y);
  const std::size_t x_hi = std::min(origin.x + radius, W - p);
  const std::size_t y_hi = std::min(origin.y + radius, H - p);
  if (x_lo > x_hi || y_lo > y_hi) {
    throw ParameterError("match_patch: empty search window around (" +
                         std::to_string(origin.x) + ", " +
                         std::to_string(origin.y) + ")");
  }

  MatchScoreMap result;
  result.x_lo = x_lo;
  result.y_lo = y_lo;
  result.scores = Tensor({y_hi - y_lo + 1, x_hi - x_lo + 1}, -1.0);
  result.best = origin;

  double tt = 0.0;
  for (double v : ref_patch.data()) tt += v * v;
  if (tt == 0.0) {
    result.degenerate = true;
    return result;
  }

  const double tie = 1e-12;
  double best_score = -std::numeric_limits<double>::infinity();
  double worst_score = std::numeric_limits<double>::infinity();
  long best_d2 = 0;
  bool found = false;
  std::size_t valid = 0;
  for (std::size_t y = y_lo; y <= y_hi; ++y) {
    for (std::size_t x = x_lo; x <= x_hi; ++x) {
      double cross = 0.0, ww = 0.0;
      for (std::size_t c = 0; c < C; ++c) {
        for (std::size_t r = 0; r < p; ++r) {
          const double* t = ref_patch.data().data() + (c * p + r) * p;
          const double* w = sup_frame.data().data() + (c * H + y + r) * W + x;
          for (std::size_t q = 0; q < p; ++q) {
            cross += t[q] * w[q];
            ww += w[q] * w[q];
          }
        }
      }
      if (ww == 0.0) continue;
      const double score = std::clamp(cross / std::sqrt(tt * ww), -1.0, 1.0);
      result.scores[(y - y_lo) * result.scores.dim(1) + (x - x_lo)] = score;
      worst_score = std::min(worst_score, score);
      ++valid;
      const long dx = static_cast<long>(x) - static_cast<long>(origin.x);
      const long dy = static_cast<long>(y) - static_cast<long>(origin.y);
      const long d2 = dx * dx + dy * dy;
      // Row-major scan order keeps the earlier placement on full ties.
      const bool better = !found || score > best_score + tie ||
                          (score >= best_score - tie && d2 < best_d2);
      if (better) {
        best_score = score;
        best_d2 = d2;
        result.best = {x, y};
        found = true;
      }
    }
  }
  // No usable window, or a flat score map (e.g. constant content).
  if (!found || (valid > 1 && best_score - worst_score <= tie)) {
    result.best = origin;
    result.degenerate = true;
  }
  return result;
}

std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t patch,
                                      std::size_t stride, bool cover_edges) {
  if (patch == 0 || stride == 0) {
    throw ParameterError("tile_origins: patch and stride must be > 0");
  }
  if (extent < patch) {
    throw ParameterError("frame extent " + std::to_string(extent) +
                         " smaller than patch " + std::to_string(patch));
  }
  std::vector<std::size_t> out;
  for (std::size_t o = 0; o + patch <= extent; o += stride) out.push_back(o);
  if (cover_edges && out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

namespace {

Tensor frame_of(const Var& v) {
  return v.value().reshaped({v.dim(1), v.dim(2), v.dim(3)});
}

Tensor crop_tensor(const Tensor& frame, PixelPos o, std::size_t p) {
  const std::size_t C = frame.dim(0), W = frame.dim(2), H = frame.dim(1);
  Tensor out({C, p, p});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x)
        out[(c * p + y) * p + x] = frame[(c * H + o.y + y) * W + o.x + x];
  return out;
}

}  // namespace

PatchTriplet triplet_at(const std::array<Var, 3>& noisy,
                        const std::array<Var, 3>& pre, PixelPos origin,
                        std::size_t patch, std::size_t radius) {
  const Tensor ref_gray = gray_projection(frame_of(pre[1]));
  const Tensor templ = crop_tensor(ref_gray, origin, patch);
  PatchTriplet t;
  t.ref_origin = origin;
  t.ref_noisy = crop(noisy[1], origin.y, origin.x, patch, patch);
  t.ref_pre = crop(pre[1], origin.y, origin.x, patch, patch);
  for (std::size_t s = 0; s < 2; ++s) {
    const std::size_t f = s == 0 ? 0 : 2;
    const MatchScoreMap m =
        match_patch(templ, gray_projection(frame_of(pre[f])), origin, radius);
    t.sup_origin[s] = m.best;
    t.degenerate[s] = m.degenerate;
    t.sup_noisy[s] = crop(noisy[f], m.best.y, m.best.x, patch, patch);
    t.sup_pre[s] = crop(pre[f], m.best.y, m.best.x, patch, patch);
  }
  return t;
}

std::vector<PatchTriplet> assemble_triplets(const VideoSequence& noisy,
                                            const VideoSequence& pre,
                                            std::size_t t, std::size_t patch,
                                            std::size_t stride,
                                            std::size_t radius,
                                            bool cover_edges) {
  if (t == 0 || t + 1 >= noisy.size() || pre.size() != noisy.size()) {
    throw ParameterError("assemble_triplets: frame " + std::to_string(t) +
                         " needs both neighbours in a sequence of " +
                         std::to_string(noisy.size()));
  }
  const Tensor& ref = noisy.frames[t];
  const auto ys = tile_origins(ref.dim(1), patch, stride, cover_edges);
  const auto xs = tile_origins(ref.dim(2), patch, stride, cover_edges);
  std::array<Var, 3> nv, pv;
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor& a = noisy.frames[t - 1 + i];
    const Tensor& b = pre.frames[t - 1 + i];
    nv[i] = Var(a.reshaped({1, a.dim(0), a.dim(1), a.dim(2)}));
    pv[i] = Var(b.reshaped({1, b.dim(0), b.dim(1), b.dim(2)}));
  }
  std::vector<PatchTriplet> out;
  out.reserve(ys.size() * xs.size());
  for (std::size_t y : ys)
    for (std::size_t x : xs) out.push_back(triplet_at(nv, pv, {x, y}, patch, radius));
  return out;
}

}  // namespace cascade
