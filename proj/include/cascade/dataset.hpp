#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "cascade/config.hpp"
#include "cascade/image_io.hpp"
#include "cascade/patch_match.hpp"
#include "cascade/synth.hpp"

namespace cascade {

/// Random 3-frame translated sequences with one centred reference patch.
struct DataSpec {
  std::size_t channels = 1;
  std::size_t patch = 32;
  /// Frame side = patch + 2 * margin.
  std::size_t margin = 8;
  std::vector<double> sigmas{0.02, 0.05, 0.1};
  /// Per-axis displacement drawn uniformly from [-max_motion, max_motion].
  double max_motion = 3.0;
  bool integer_motion = false;
  std::size_t search_radius = 8;
  std::vector<Texture> textures{Texture::Gradient, Texture::Checker, Texture::Perlin};

  std::size_t frame_size() const { return patch + 2 * margin; }
  PixelPos origin() const { return {margin, margin}; }

  static DataSpec from(const KeyValueConfig& kv);
  static const std::set<std::string>& keys();
};

struct Sample {
  VideoSequence clean;
  VideoSequence noisy;
  std::array<double, 2> motion{0.0, 0.0};
  double sigma = 0.0;
  Texture texture = Texture::Perlin;
};

/// Comma-separated texture names.
std::vector<Texture> parse_textures(const std::string& list);

/// Deterministic in (spec, seed).
Sample make_sample(const DataSpec& spec, std::uint64_t seed);

/// Reference patch of frame 1 at the DataSpec origin, [1,C,p,p].
Tensor clean_patch(const Sample& sample, const DataSpec& spec, PixelPos origin);

}  // namespace cascade
