#pragma once

#include <cstddef>
#include <vector>

#include "cascade/tensor.hpp"

namespace cascade {

// Elementwise arithmetic. Binary operands must have identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// scale * x + shift
Var affine(const Var& x, double scale, double shift = 0.0);

enum class Pointwise { Sigmoid, Tanh, Relu, Exp, Log };

/// Elementwise activation. `Log` throws DomainError on non-positive input.
Var pointwise(const Var& x, Pointwise kind);
inline Var sigmoid(const Var& x) { return pointwise(x, Pointwise::Sigmoid); }
inline Var tanh(const Var& x) { return pointwise(x, Pointwise::Tanh); }
inline Var relu(const Var& x) { return pointwise(x, Pointwise::Relu); }
inline Var exp(const Var& x) { return pointwise(x, Pointwise::Exp); }
inline Var log(const Var& x) { return pointwise(x, Pointwise::Log); }

/// Clamp to [lo, hi]; the gradient is zero where the clamp is active.
Var clamp(const Var& x, double lo, double hi);

// Layout ops on [B,C,H,W].
Var concat_channels(const std::vector<Var>& parts);
Var slice_channels(const Var& x, std::size_t first, std::size_t count);
Var tile_channels(const Var& x, std::size_t times);
Var crop(const Var& x, std::size_t y0, std::size_t x0, std::size_t h,
         std::size_t w);
Var reshape(const Var& x, Shape shape);

/// Zero-padded 2D cross-correlation. `bias` may be undefined.
Var conv2d(const Var& input, const Var& weight, const Var& bias,
           std::size_t stride = 1, std::size_t padding = 0);

/// Samples `input` [B,C,H,W] at absolute pixel positions `coords`
/// [B,2,Ho,Wo] (channel 0 = x, channel 1 = y). Bilinear with clamp-to-edge;
/// differentiable in both input and coords.
Var bilinear_sample(const Var& input, const Var& coords);

/// Pixel-centre grid [B,2,H,W] for use with bilinear_sample.
Tensor identity_grid(std::size_t batch, std::size_t height, std::size_t width);

/// Backward warp: out(p) = input(p + flow(p)). `flow` is [B,2,H,W].
Var warp(const Var& input, const Var& flow);

/// Mean over non-overlapping 2x2 blocks. Odd extents throw DimensionError.
Var avg_pool2(const Var& input);

/// Bilinear x2 upsampling with half-pixel centres and clamped borders.
Var upsample2(const Var& input);

/// All-pairs inner products of two feature maps [1,D,h,w]. Result is
/// [h*w, 1, h, w]: entry (i*w+j, 0, k, l) = sum_d f1[d,i,j] * f2[d,k,l].
Var corr_volume(const Var& feat1, const Var& feat2);

/// Samples each correlation level on a (2r+1)^2 grid around the
/// flow-displaced position (divided by 2^level). `levels` are
/// [h*w,1,h_l,w_l]; `flow` is [1,2,h,w]. Output is [1, L*(2r+1)^2, h, w],
/// ordered level-major, then grid row (dy), then grid column (dx).
Var corr_lookup(const std::vector<Var>& levels, const Var& flow,
                std::size_t radius);

/// Modulated deformable convolution (stride 1, same padding, zero outside).
///   input   [1,Cin,H,W]
///   offsets [1, 2*G*k*k, H, W]   channel (g*k*k + tap)*2 + {0:x, 1:y}
///   mask    [1, G*k*k, H, W]
///   weight  [Cout,Cin,k,k], bias [Cout] (may be undefined)
/// Input channels are split into G contiguous groups, each with its own
/// offsets and mask per kernel tap.
Var deform_conv2d(const Var& input, const Var& offsets, const Var& mask,
                  const Var& weight, const Var& bias, std::size_t groups);

// Reductions to a single-element tensor.
Var sum(const Var& x);
Var mean(const Var& x);
/// sum(x * weights) with a constant weight tensor.
Var weighted_sum(const Var& x, const Tensor& weights);
Var mse_loss(const Var& pred, const Var& target);
Var l1_loss(const Var& pred, const Var& target);

}  // namespace cascade
