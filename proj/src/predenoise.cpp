#include "cascade/predenoise.hpp"

#include "cascade/ops.hpp"

namespace cascade {

PreDenoiser::PreDenoiser(ParamSet& params, const PreDenoiserConfig& config,
                         std::mt19937_64& rng)
    : config_(config) {
  if (config.depth == 0 || config.base_width == 0 || config.channels == 0) {
    throw ParameterError("PreDenoiser: depth, width and channels must be > 0");
  }
  std::size_t in = config.channels;
  std::vector<std::size_t> widths;
  for (std::size_t l = 0; l < config.depth; ++l) {
    const std::size_t w = config.base_width << l;
    const std::string name = "pre/enc" + std::to_string(l);
    encoder_.emplace_back(ConvLayer::bind(params, name + "a", in, w, 3, rng),
                          ConvLayer::bind(params, name + "b", w, w, 3, rng));
    widths.push_back(w);
    in = w;
  }
  const std::size_t bw = config.base_width << config.depth;
  bottleneck_ = ConvLayer::bind(params, "pre/mid", in, bw, 3, rng);
  std::size_t up = bw;
  for (std::size_t l = config.depth; l-- > 0;) {
    decoder_.push_back(ConvLayer::bind(params, "pre/dec" + std::to_string(l),
                                       up + widths[l], widths[l], 3, rng));
    up = widths[l];
  }
  out_ = ConvLayer::bind(params, "pre/out", up, config.channels, 3, rng);
}

Var PreDenoiser::forward(const Var& frames) const {
  if (frames.shape().size() != 4 || frames.dim(1) != config_.channels) {
    throw DimensionError("PreDenoiser: expected [B," +
                         std::to_string(config_.channels) + ",H,W], got " +
                         shape_str(frames.shape()));
  }
  const std::size_t unit = std::size_t{1} << config_.depth;
  if (frames.dim(2) % unit != 0 || frames.dim(3) % unit != 0) {
    throw DimensionError("PreDenoiser: height " + std::to_string(frames.dim(2)) +
                         " and width " + std::to_string(frames.dim(3)) +
                         " must be divisible by " + std::to_string(unit));
  }
  std::vector<Var> skips;
  Var x = affine(frames, 1.0, -0.5);
  for (const auto& [a, b] : encoder_) {
    x = relu(b(relu(a(x))));
    skips.push_back(x);
    x = avg_pool2(x);
  }
  x = relu(bottleneck_(x));
  for (std::size_t i = 0; i < decoder_.size(); ++i) {
    const Var& skip = skips[skips.size() - 1 - i];
    x = relu(decoder_[i](concat_channels({upsample2(x), skip})));
  }
  return add(frames, out_(x));
}

Tensor PreDenoiser::predenoise(const Tensor& frame) const {
  if (frame.rank() != 3) {
    throw DimensionError("predenoise: expected [C,H,W], got " +
                         shape_str(frame.shape()));
  }
  NoGradGuard guard;
  Var in(frame.reshaped({1, frame.dim(0), frame.dim(1), frame.dim(2)}));
  return forward(in).value().reshaped(frame.shape());
}

}  // namespace cascade
