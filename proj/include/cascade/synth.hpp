#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>

#include "cascade/image_io.hpp"

namespace cascade {

enum class Texture { Gradient, Checker, Perlin };

Texture parse_texture(const std::string& name);
std::string texture_name(Texture t);

struct SynthSpec {
  std::uint64_t seed = 0;
  std::size_t n_frames = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  /// Per-frame displacement (dx, dy) in pixels; may be fractional.
  std::array<double, 2> motion{0.0, 0.0};
  Texture texture = Texture::Perlin;
};

/// Frame k is frame 0 translated by k * motion: frame_k(x, y) =
/// frame_0(x - k dx, y - k dy), sampled bilinearly with clamp-to-edge fill.
/// Pure function of `spec`.
VideoSequence synth_sequence(const SynthSpec& spec);

struct GaussianNoise {
  double sigma = 0.0;
};
/// Signal-dependent noise with variance a * x + b.
struct PoissonGaussianNoise {
  double a = 0.0;
  double b = 0.0;
};
/// Per-pixel standard deviation map [H,W], shared by all channels/frames.
struct SigmaMapNoise {
  Tensor sigma;
};
using NoiseModel = std::variant<GaussianNoise, PoissonGaussianNoise, SigmaMapNoise>;

/// Adds zero-mean noise and clamps to [0,1]. Pure function of its arguments.
VideoSequence add_noise(const VideoSequence& seq, const NoiseModel& model,
                        std::uint64_t seed);

}  // namespace cascade
