#include "cascade/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cascade {

Texture parse_texture(const std::string& name) {
  if (name == "gradient") return Texture::Gradient;
  if (name == "checker") return Texture::Checker;
  if (name == "perlin") return Texture::Perlin;
  throw ParameterError("unknown texture '" + name +
                       "' (expected gradient, checker or perlin)");
}

std::string texture_name(Texture t) {
  switch (t) {
    case Texture::Gradient: return "gradient";
    case Texture::Checker: return "checker";
    case Texture::Perlin: return "perlin";
  }
  return "?";
}

namespace {

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// Multi-octave value noise on a random lattice, normalised to [0.05, 0.95].
std::vector<double> value_noise(std::size_t H, std::size_t W,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> img(H * W, 0.0);
  double cell = 4.0 + 6.0 * uni(rng);
  double amp = 1.0;
  for (int octave = 0; octave < 3; ++octave) {
    const auto gh = static_cast<std::size_t>(std::ceil(H / cell)) + 2;
    const auto gw = static_cast<std::size_t>(std::ceil(W / cell)) + 2;
    std::vector<double> lattice(gh * gw);
    for (double& v : lattice) v = uni(rng);
    for (std::size_t y = 0; y < H; ++y) {
      const double fy = y / cell;
      const auto y0 = static_cast<std::size_t>(fy);
      const double ty = smoothstep(fy - y0);
      for (std::size_t x = 0; x < W; ++x) {
        const double fx = x / cell;
        const auto x0 = static_cast<std::size_t>(fx);
        const double tx = smoothstep(fx - x0);
        const double top = (1 - tx) * lattice[y0 * gw + x0] + tx * lattice[y0 * gw + x0 + 1];
        const double bot = (1 - tx) * lattice[(y0 + 1) * gw + x0] +
                           tx * lattice[(y0 + 1) * gw + x0 + 1];
        img[y * W + x] += amp * ((1 - ty) * top + ty * bot);
      }
    }
    cell = std::max(1.5, cell / 2.0);
    amp *= 0.5;
  }
  const auto [lo, hi] = std::minmax_element(img.begin(), img.end());
  const double a = *lo, span = std::max(*hi - *lo, 1e-12);
  for (double& v : img) v = 0.05 + 0.9 * (v - a) / span;
  return img;
}

std::vector<double> base_texture(const SynthSpec& spec, std::mt19937_64& rng) {
  const std::size_t H = spec.height, W = spec.width;
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> img(H * W);
  switch (spec.texture) {
    case Texture::Gradient: {
      const double theta = 2.0 * M_PI * uni(rng);
      const double c = std::cos(theta), s = std::sin(theta);
      double lo = 1e300, hi = -1e300;
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const double v = c * x + s * y;
          img[y * W + x] = v;
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
      const double span = std::max(hi - lo, 1e-12);
      for (double& v : img) v = 0.1 + 0.8 * (v - lo) / span;
      break;
    }
    case Texture::Checker: {
      const std::size_t cell = 3 + static_cast<std::size_t>(uni(rng) * 6.0);
      const std::size_t phase_x = static_cast<std::size_t>(uni(rng) * cell);
      const std::size_t phase_y = static_cast<std::size_t>(uni(rng) * cell);
      const double dark = 0.1 + 0.3 * uni(rng);
      const double light = 0.6 + 0.3 * uni(rng);
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const bool odd = (((x + phase_x) / cell) + ((y + phase_y) / cell)) % 2;
          img[y * W + x] = odd ? light : dark;
        }
      break;
    }
    case Texture::Perlin:
      img = value_noise(H, W, rng);
      break;
  }
  return img;
}

double sample_clamped(const std::vector<double>& img, std::size_t H,
                      std::size_t W, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(W - 1));
  y = std::clamp(y, 0.0, static_cast<double>(H - 1));
  const std::size_t x0 = std::min(static_cast<std::size_t>(x), W > 1 ? W - 2 : 0);
  const std::size_t y0 = std::min(static_cast<std::size_t>(y), H > 1 ? H - 2 : 0);
  const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
  const double wx = x - x0, wy = y - y0;
  return (1 - wy) * ((1 - wx) * img[y0 * W + x0] + wx * img[y0 * W + x1]) +
         wy * ((1 - wx) * img[y1 * W + x0] + wx * img[y1 * W + x1]);
}

}  // namespace

VideoSequence synth_sequence(const SynthSpec& spec) {
  if (spec.n_frames < 3) {
    throw ParameterError("synth_sequence: n_frames must be >= 3, got " +
                         std::to_string(spec.n_frames));
  }
  if (spec.height == 0 || spec.width == 0 || spec.channels == 0) {
    throw ParameterError("synth_sequence: empty frame size");
  }
  if (std::abs(spec.motion[0]) >= static_cast<double>(spec.width) ||
      std::abs(spec.motion[1]) >= static_cast<double>(spec.height)) {
    throw ParameterError("synth_sequence: motion (" +
                         std::to_string(spec.motion[0]) + ", " +
                         std::to_string(spec.motion[1]) +
                         ") exceeds frame size " + std::to_string(spec.width) +
                         "x" + std::to_string(spec.height));
  }
  std::mt19937_64 rng(spec.seed);
  const std::size_t H = spec.height, W = spec.width, C = spec.channels;
  const std::vector<double> base = base_texture(spec, rng);

  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<double> gain(C, 1.0), shift(C, 0.0);
  if (C > 1) {
    for (std::size_t c = 0; c < C; ++c) {
      gain[c] = 0.7 + 0.3 * uni(rng);
      shift[c] = 0.1 * (uni(rng) - 0.5);
    }
  }

  VideoSequence seq;
  for (std::size_t k = 0; k < spec.n_frames; ++k) {
    const double dx = static_cast<double>(k) * spec.motion[0];
    const double dy = static_cast<double>(k) * spec.motion[1];
    Tensor frame({C, H, W});
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t x = 0; x < W; ++x) {
        const double v = sample_clamped(base, H, W, static_cast<double>(x) - dx,
                                        static_cast<double>(y) - dy);
        for (std::size_t c = 0; c < C; ++c)
          frame[(c * H + y) * W + x] = std::clamp(gain[c] * v + shift[c], 0.0, 1.0);
      }
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

VideoSequence add_noise(const VideoSequence& seq, const NoiseModel& model,
                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  VideoSequence out;
  out.frame_rate = seq.frame_rate;
  std::vector<double> levels;
  for (const Tensor& frame : seq.frames) {
    Tensor noisy = frame;
    const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
    std::visit(
        [&](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, GaussianNoise>) {
            if (m.sigma < 0) throw ParameterError("add_noise: sigma must be >= 0");
            for (double& v : noisy.data()) v += m.sigma * normal(rng);
            levels.push_back(m.sigma);
          } else if constexpr (std::is_same_v<M, PoissonGaussianNoise>) {
            if (m.a < 0 || m.b < 0)
              throw ParameterError("add_noise: a and b must be >= 0");
            double var_sum = 0.0;
            for (double& v : noisy.data()) {
              const double var = m.a * std::max(v, 0.0) + m.b;
              var_sum += var;
              v += std::sqrt(var) * normal(rng);
            }
            levels.push_back(std::sqrt(var_sum / noisy.numel()));
          } else {
            if (m.sigma.rank() != 2 || m.sigma.dim(0) != H || m.sigma.dim(1) != W) {
              throw DimensionError("add_noise: sigma map " +
                                   shape_str(m.sigma.shape()) +
                                   " does not match frame height/width");
            }
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t i = 0; i < H * W; ++i) {
                const double s = m.sigma[i];
                if (s < 0) throw ParameterError("add_noise: negative sigma in map");
                noisy[c * H * W + i] += s * normal(rng);
              }
            levels.push_back(m.sigma.mean());
          }
        },
        model);
    for (double& v : noisy.data()) v = std::clamp(v, 0.0, 1.0);
    out.frames.push_back(std::move(noisy));
  }
  out.noise_level = std::move(levels);
  return out;
}

}  // namespace cascade
