#pragma once

#include <array>
#include <vector>

#include "cascade/image_io.hpp"
#include "cascade/tensor.hpp"

namespace cascade {

/// Pixel position (x = column, y = row).
struct PixelPos {
  std::size_t x = 0;
  std::size_t y = 0;
  bool operator==(const PixelPos&) const = default;
};

/// Reference patch at frame t with its matched patches from t-1 (index 0)
/// and t+1 (index 1). Patches are [1,C,p,p].
struct PatchTriplet {
  Var ref_noisy;
  Var ref_pre;
  std::array<Var, 2> sup_noisy;
  std::array<Var, 2> sup_pre;
  PixelPos ref_origin;
  std::array<PixelPos, 2> sup_origin;
  /// True where matching fell back to zero displacement.
  std::array<bool, 2> degenerate{false, false};

  std::size_t patch_size() const { return ref_noisy.dim(3); }
};

/// Exhaustive NCC scores over a clipped search window.
struct MatchScoreMap {
  Tensor scores;        // [rows, cols]; window origin (x_lo, y_lo)
  std::size_t x_lo = 0;
  std::size_t y_lo = 0;
  PixelPos best;        // absolute top-left of the winning placement
  bool degenerate = false;
};

/// Normalised cross-correlation of two equally shaped patches:
///   sum(T * I) / sqrt(sum(T^2) * sum(I^2))
/// summed over all channels. Zero energy in either operand throws
/// DomainError.
double ncc_score(const Tensor& templ, const Tensor& window);

/// Scans every placement of `ref_patch` [C,p,p] in `sup_frame` [C,H,W] whose
/// top-left lies within `origin` +- `radius` (clipped to valid placements).
/// Ties within 1e-12 go to the smallest displacement, then row-major order.
/// A zero-energy template, no window with non-zero energy, or a flat score
/// map falls back to zero displacement with `degenerate` set. An empty window throws
/// ParameterError.
MatchScoreMap match_patch(const Tensor& ref_patch, const Tensor& sup_frame,
                          PixelPos origin, std::size_t radius);

/// Channel mean [C,H,W] -> [1,H,W].
Tensor gray_projection(const Tensor& frame);

/// Top-left origins of tiles covering [0,extent) with `stride`. With
/// `cover_edges`, a final tile is aligned to the far edge when the regular
/// grid falls short.
std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t patch,
                                      std::size_t stride, bool cover_edges);

/// Builds the triplet for the reference patch at `origin` in frame t given
/// the frames (t-1, t, t+1) as [1,C,H,W] Vars. Matching runs on the grayscale
/// projection of the pre-denoised frames; crops keep the graph so gradients
/// reach the frames.
PatchTriplet triplet_at(const std::array<Var, 3>& noisy,
                        const std::array<Var, 3>& pre, PixelPos origin,
                        std::size_t patch, std::size_t radius);

/// Tiles frame t of the sequences and matches every tile against t-1 and t+1.
/// Triplets come out row-major over the tile grid.
std::vector<PatchTriplet> assemble_triplets(const VideoSequence& noisy,
                                            const VideoSequence& pre,
                                            std::size_t t, std::size_t patch,
                                            std::size_t stride,
                                            std::size_t radius,
                                            bool cover_edges = false);

}  // namespace cascade
