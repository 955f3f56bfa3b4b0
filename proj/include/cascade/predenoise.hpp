#pragma once

#include <random>
#include <vector>

#include "cascade/param_set.hpp"

namespace cascade {

struct PreDenoiserConfig {
  std::size_t channels = 1;
  std::size_t depth = 2;
  std::size_t base_width = 8;
};

/// Single-frame residual U-Net: `depth` encoder levels with 2x average
/// pooling, a bottleneck, and decoder levels with bilinear upsampling and skip
/// concatenation. Parameters live under the "pre/" prefix.
class PreDenoiser {
 public:
  PreDenoiser(ParamSet& params, const PreDenoiserConfig& config,
              std::mt19937_64& rng);

  const PreDenoiserConfig& config() const { return config_; }

  /// [B,C,H,W] -> [B,C,H,W]; H and W must be divisible by 2^depth.
  Var forward(const Var& frames) const;

  /// Inference on one [C,H,W] frame without recording gradients.
  Tensor predenoise(const Tensor& frame) const;

 private:
  PreDenoiserConfig config_;
  std::vector<std::pair<ConvLayer, ConvLayer>> encoder_;
  ConvLayer bottleneck_;
  std::vector<ConvLayer> decoder_;
  ConvLayer out_;
};

}  // namespace cascade
