#include "cascade/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace cascade {

namespace {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;
using detail::make_result;
using detail::Node;

void require_rank(const Var& x, std::size_t rank, const char* op,
                  const char* arg) {
  if (x.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": " + arg + " must have rank " +
                         std::to_string(rank) + ", got shape " +
                         shape_str(x.shape()));
  }
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

void accumulate(const Var& target, const Tensor& delta) {
  if (!target.requires_grad()) return;
  auto g = target.grad_buffer().data();
  auto d = delta.data();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
}

// Clamp-to-edge linear interpolation support along one axis.
struct EdgeTap {
  std::size_t i0;
  std::size_t i1;
  double w1;
  bool interior;  // derivative w.r.t. the coordinate is non-zero
};

EdgeTap edge_tap(double x, std::size_t n) {
  if (n == 1) return {0, 0, 0.0, false};
  const double hi = static_cast<double>(n - 1);
  const double xc = std::clamp(x, 0.0, hi);
  std::size_t i0 = std::min(static_cast<std::size_t>(std::floor(xc)), n - 2);
  return {i0, i0 + 1, xc - static_cast<double>(i0), x > 0.0 && x < hi};
}

}  // namespace

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& self) mutable {
    accumulate(a, self.grad);
    accumulate(b, self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& self) mutable {
    accumulate(a, self.grad);
    if (b.requires_grad()) {
      auto g = b.grad_buffer().data();
      auto d = self.grad.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= d[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return make_result(std::move(out), {a, b}, [a, b](Node& self) mutable {
    auto d = self.grad.data();
    if (a.requires_grad()) {
      auto g = a.grad_buffer().data();
      auto bv = b.value().data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto g = b.grad_buffer().data();
      auto av = a.value().data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i] * av[i];
    }
  });
}

Var affine(const Var& x, double scale, double shift) {
  Tensor out = x.value();
  for (double& v : out.data()) v = scale * v + shift;
  return make_result(std::move(out), {x}, [x, scale](Node& self) mutable {
    auto g = x.grad_buffer().data();
    auto d = self.grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * d[i];
  });
}

Var pointwise(const Var& x, Pointwise kind) {
  Tensor out = x.value();
  auto o = out.data();
  switch (kind) {
    case Pointwise::Sigmoid:
      for (double& v : o) v = 1.0 / (1.0 + std::exp(-v));
      break;
    case Pointwise::Tanh:
      for (double& v : o) v = std::tanh(v);
      break;
    case Pointwise::Relu:
      for (double& v : o) v = v > 0.0 ? v : 0.0;
      break;
    case Pointwise::Exp:
      for (double& v : o) v = std::exp(v);
      break;
    case Pointwise::Log:
      for (std::size_t i = 0; i < o.size(); ++i) {
        if (!(o[i] > 0.0)) {
          throw DomainError("log: non-positive input " + std::to_string(o[i]) +
                            " at flat index " + std::to_string(i));
        }
        o[i] = std::log(o[i]);
      }
      break;
  }
  // The adjoint is expressed through the output where possible.
  auto result = make_result(std::move(out), {x}, nullptr);
  if (!result.requires_grad()) return result;
  Node* self_node = result.node();
  self_node->backward = [x, kind](Node& self) mutable {
    auto g = x.grad_buffer().data();
    auto d = self.grad.data();
    auto y = self.value.data();
    auto in = x.value().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      double local = 0.0;
      switch (kind) {
        case Pointwise::Sigmoid: local = y[i] * (1.0 - y[i]); break;
        case Pointwise::Tanh: local = 1.0 - y[i] * y[i]; break;
        case Pointwise::Relu: local = in[i] > 0.0 ? 1.0 : 0.0; break;
        case Pointwise::Exp: local = y[i]; break;
        case Pointwise::Log: local = 1.0 / in[i]; break;
      }
      g[i] += d[i] * local;
    }
  };
  return result;
}

Var clamp(const Var& x, double lo, double hi) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::clamp(v, lo, hi);
  return make_result(std::move(out), {x}, [x, lo, hi](Node& self) mutable {
    auto g = x.grad_buffer().data();
    auto d = self.grad.data();
    auto in = x.value().data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > lo && in[i] < hi) g[i] += d[i];
    }
  });
}

Var concat_channels(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no inputs");
  for (const auto& p : parts) require_rank(p, 4, "concat_channels", "part");
  const std::size_t B = parts[0].dim(0);
  const std::size_t H = parts[0].dim(2);
  const std::size_t W = parts[0].dim(3);
  std::size_t C = 0;
  for (const auto& p : parts) {
    if (p.dim(0) != B || p.dim(2) != H || p.dim(3) != W) {
      throw DimensionError("concat_channels: batch/height/width mismatch " +
                           shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    C += p.dim(1);
  }
  const std::size_t plane = H * W;
  Tensor out({B, C, H, W});
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    for (std::size_t b = 0; b < B; ++b) {
      const double* src = p.value().data().data() + b * pc * plane;
      double* dst = out.data().data() + (b * C + c0) * plane;
      std::copy(src, src + pc * plane, dst);
    }
    c0 += pc;
  }
  return make_result(std::move(out), parts,
                     [parts, B, C, plane](Node& self) mutable {
                       std::size_t c0 = 0;
                       for (auto& p : parts) {
                         const std::size_t pc = p.dim(1);
                         if (p.requires_grad()) {
                           auto g = p.grad_buffer().data();
                           for (std::size_t b = 0; b < B; ++b) {
                             const double* src = self.grad.data().data() +
                                                 (b * C + c0) * plane;
                             double* dst = g.data() + b * pc * plane;
                             for (std::size_t i = 0; i < pc * plane; ++i)
                               dst[i] += src[i];
                           }
                         }
                         c0 += pc;
                       }
                     });
}

Var slice_channels(const Var& x, std::size_t first, std::size_t count) {
  require_rank(x, 4, "slice_channels", "input");
  const std::size_t B = x.dim(0), C = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (first + count > C || count == 0) {
    throw DimensionError("slice_channels: channels [" + std::to_string(first) +
                         ", " + std::to_string(first + count) +
                         ") out of range for channel axis of " +
                         shape_str(x.shape()));
  }
  Tensor out({B, count, x.dim(2), x.dim(3)});
  for (std::size_t b = 0; b < B; ++b) {
    const double* src = x.value().data().data() + (b * C + first) * plane;
    std::copy(src, src + count * plane,
              out.data().data() + b * count * plane);
  }
  return make_result(std::move(out), {x},
                     [x, B, C, first, count, plane](Node& self) mutable {
                       auto g = x.grad_buffer().data();
                       for (std::size_t b = 0; b < B; ++b) {
                         const double* src =
                             self.grad.data().data() + b * count * plane;
                         double* dst = g.data() + (b * C + first) * plane;
                         for (std::size_t i = 0; i < count * plane; ++i)
                           dst[i] += src[i];
                       }
                     });
}

Var tile_channels(const Var& x, std::size_t times) {
  return concat_channels(std::vector<Var>(times, x));
}

Var crop(const Var& x, std::size_t y0, std::size_t x0, std::size_t h,
         std::size_t w) {
  require_rank(x, 4, "crop", "input");
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (y0 + h > H || x0 + w > W) {
    throw DimensionError("crop: window rows [" + std::to_string(y0) + "," +
                         std::to_string(y0 + h) + ") cols [" +
                         std::to_string(x0) + "," + std::to_string(x0 + w) +
                         ") exceeds height/width of " + shape_str(x.shape()));
  }
  Tensor out({B, C, h, w});
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    for (std::size_t y = 0; y < h; ++y) {
      const double* src = x.value().data().data() + (bc * H + y0 + y) * W + x0;
      std::copy(src, src + w, out.data().data() + (bc * h + y) * w);
    }
  }
  return make_result(std::move(out), {x},
                     [x, B, C, H, W, y0, x0, h, w](Node& self) mutable {
                       auto g = x.grad_buffer().data();
                       for (std::size_t bc = 0; bc < B * C; ++bc) {
                         for (std::size_t y = 0; y < h; ++y) {
                           const double* src =
                               self.grad.data().data() + (bc * h + y) * w;
                           double* dst = g.data() + (bc * H + y0 + y) * W + x0;
                           for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Var reshape(const Var& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " +
                         shape_str(shape));
  }
  return make_result(x.value().reshaped(std::move(shape)), {x},
                     [x](Node& self) mutable { accumulate(x, self.grad); });
}

Var conv2d(const Var& input, const Var& weight, const Var& bias,
           std::size_t stride, std::size_t padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t O = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != C) {
    throw DimensionError("conv2d: input channel axis (" + std::to_string(C) +
                         ") != weight input-channel axis (" +
                         std::to_string(weight.dim(1)) + ")");
  }
  if (weight.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d: kernel must be square and odd, weight " +
                         shape_str(weight.shape()));
  }
  if (stride == 0) throw ParameterError("conv2d: stride must be >= 1");
  if (H + 2 * padding < k || W + 2 * padding < k) {
    throw DimensionError("conv2d: kernel " + std::to_string(k) +
                         " larger than padded height/width of " +
                         shape_str(input.shape()));
  }
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != O)) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias.shape()) +
                         " does not match output channels " +
                         std::to_string(O));
  }
  const std::size_t Ho = (H + 2 * padding - k) / stride + 1;
  const std::size_t Wo = (W + 2 * padding - k) / stride + 1;
  const std::size_t K = C * k * k, P = Ho * Wo;

  auto cols = std::make_shared<std::vector<double>>(B * K * P, 0.0);
  const double* in = input.value().data().data();
  for (std::size_t b = 0; b < B; ++b) {
    double* col = cols->data() + b * K * P;
    for (std::size_t c = 0; c < C; ++c) {
      const double* plane = in + (b * C + c) * H * W;
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* row = col + ((c * k + ky) * k + kx) * P;
          for (std::size_t oy = 0; oy < Ho; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                      static_cast<std::ptrdiff_t>(padding);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t ox = 0; ox < Wo; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * stride + kx) -
                  static_cast<std::ptrdiff_t>(padding);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              row[oy * Wo + ox] = plane[iy * W + ix];
            }
          }
        }
      }
    }
  }

  Tensor out({B, O, Ho, Wo});
  CMapM wmat(weight.value().data().data(), O, K);
  for (std::size_t b = 0; b < B; ++b) {
    CMapM colm(cols->data() + b * K * P, K, P);
    MapM om(out.data().data() + b * O * P, O, P);
    om.noalias() = wmat * colm;
    if (bias.defined()) {
      for (std::size_t o = 0; o < O; ++o) om.row(o).array() += bias.value()[o];
    }
  }

  return make_result(
      std::move(out), {input, weight, bias},
      [input, weight, bias, cols, B, C, H, W, O, k, stride, padding, Ho, Wo, K,
       P](Node& self) mutable {
        const double* dout = self.grad.data().data();
        if (weight.requires_grad()) {
          MapM gw(weight.grad_buffer().data().data(), O, K);
          for (std::size_t b = 0; b < B; ++b) {
            CMapM dm(dout + b * O * P, O, P);
            CMapM colm(cols->data() + b * K * P, K, P);
            gw.noalias() += dm * colm.transpose();
          }
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_buffer().data();
          for (std::size_t b = 0; b < B; ++b) {
            CMapM dm(dout + b * O * P, O, P);
            for (std::size_t o = 0; o < O; ++o) gb[o] += dm.row(o).sum();
          }
        }
        if (input.requires_grad()) {
          double* gin = input.grad_buffer().data().data();
          CMapM wmat(weight.value().data().data(), O, K);
          MatRM dcol(K, P);
          for (std::size_t b = 0; b < B; ++b) {
            CMapM dm(dout + b * O * P, O, P);
            dcol.noalias() = wmat.transpose() * dm;
            for (std::size_t c = 0; c < C; ++c) {
              double* plane = gin + (b * C + c) * H * W;
              for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const double* row = dcol.data() + ((c * k + ky) * k + kx) * P;
                  for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy =
                        static_cast<std::ptrdiff_t>(oy * stride + ky) -
                        static_cast<std::ptrdiff_t>(padding);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                      const std::ptrdiff_t ix =
                          static_cast<std::ptrdiff_t>(ox * stride + kx) -
                          static_cast<std::ptrdiff_t>(padding);
                      if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                      plane[iy * W + ix] += row[oy * Wo + ox];
                    }
                  }
                }
              }
            }
          }
        }
      });
}

Tensor identity_grid(std::size_t batch, std::size_t height, std::size_t width) {
  Tensor grid({batch, 2, height, width});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        grid.at(b, 0, y, x) = static_cast<double>(x);
        grid.at(b, 1, y, x) = static_cast<double>(y);
      }
    }
  }
  return grid;
}

Var bilinear_sample(const Var& input, const Var& coords) {
  require_rank(input, 4, "bilinear_sample", "input");
  require_rank(coords, 4, "bilinear_sample", "coords");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  if (coords.dim(0) != B || coords.dim(1) != 2) {
    throw DimensionError("bilinear_sample: coords " +
                         shape_str(coords.shape()) +
                         " must be [B,2,Ho,Wo] with batch axis matching input " +
                         shape_str(input.shape()));
  }
  const std::size_t Ho = coords.dim(2), Wo = coords.dim(3), P = Ho * Wo;
  Tensor out({B, C, Ho, Wo});
  const double* in = input.value().data().data();
  const double* cd = coords.value().data().data();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t p = 0; p < P; ++p) {
      const EdgeTap tx = edge_tap(cd[(b * 2) * P + p], W);
      const EdgeTap ty = edge_tap(cd[(b * 2 + 1) * P + p], H);
      for (std::size_t c = 0; c < C; ++c) {
        const double* pl = in + (b * C + c) * H * W;
        const double top = (1.0 - tx.w1) * pl[ty.i0 * W + tx.i0] +
                           tx.w1 * pl[ty.i0 * W + tx.i1];
        const double bot = (1.0 - tx.w1) * pl[ty.i1 * W + tx.i0] +
                           tx.w1 * pl[ty.i1 * W + tx.i1];
        out.data()[(b * C + c) * P + p] = (1.0 - ty.w1) * top + ty.w1 * bot;
      }
    }
  }
  return make_result(
      std::move(out), {input, coords},
      [input, coords, B, C, H, W, P](Node& self) mutable {
        const double* d = self.grad.data().data();
        const double* in = input.value().data().data();
        const double* cd = coords.value().data().data();
        double* gin =
            input.requires_grad() ? input.grad_buffer().data().data() : nullptr;
        double* gc =
            coords.requires_grad() ? coords.grad_buffer().data().data() : nullptr;
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t p = 0; p < P; ++p) {
            const EdgeTap tx = edge_tap(cd[(b * 2) * P + p], W);
            const EdgeTap ty = edge_tap(cd[(b * 2 + 1) * P + p], H);
            double gx = 0.0, gy = 0.0;
            for (std::size_t c = 0; c < C; ++c) {
              const double g = d[(b * C + c) * P + p];
              const std::size_t base = (b * C + c) * H * W;
              if (gin) {
                gin[base + ty.i0 * W + tx.i0] += g * (1 - tx.w1) * (1 - ty.w1);
                gin[base + ty.i0 * W + tx.i1] += g * tx.w1 * (1 - ty.w1);
                gin[base + ty.i1 * W + tx.i0] += g * (1 - tx.w1) * ty.w1;
                gin[base + ty.i1 * W + tx.i1] += g * tx.w1 * ty.w1;
              }
              if (gc) {
                const double* pl = in + base;
                const double v00 = pl[ty.i0 * W + tx.i0];
                const double v01 = pl[ty.i0 * W + tx.i1];
                const double v10 = pl[ty.i1 * W + tx.i0];
                const double v11 = pl[ty.i1 * W + tx.i1];
                if (tx.interior)
                  gx += g * ((1 - ty.w1) * (v01 - v00) + ty.w1 * (v11 - v10));
                if (ty.interior)
                  gy += g * ((1 - tx.w1) * (v10 - v00) + tx.w1 * (v11 - v01));
              }
            }
            if (gc) {
              gc[(b * 2) * P + p] += gx;
              gc[(b * 2 + 1) * P + p] += gy;
            }
          }
        }
      });
}

Var warp(const Var& input, const Var& flow) {
  require_rank(flow, 4, "warp", "flow");
  Var grid(identity_grid(flow.dim(0), flow.dim(2), flow.dim(3)));
  return bilinear_sample(input, add(grid, flow));
}

Var avg_pool2(const Var& input) {
  require_rank(input, 4, "avg_pool2", "input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  if (H % 2 != 0 || W % 2 != 0) {
    throw DimensionError("avg_pool2: height (" + std::to_string(H) +
                         ") and width (" + std::to_string(W) +
                         ") must be even");
  }
  const std::size_t h = H / 2, w = W / 2;
  Tensor out({B, C, h, w});
  const double* in = input.value().data().data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* pl = in + bc * H * W;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        out.data()[(bc * h + y) * w + x] =
            0.25 * (pl[2 * y * W + 2 * x] + pl[2 * y * W + 2 * x + 1] +
                    pl[(2 * y + 1) * W + 2 * x] +
                    pl[(2 * y + 1) * W + 2 * x + 1]);
      }
    }
  }
  return make_result(std::move(out), {input},
                     [input, B, C, H, W, h, w](Node& self) mutable {
                       double* g = input.grad_buffer().data().data();
                       const double* d = self.grad.data().data();
                       for (std::size_t bc = 0; bc < B * C; ++bc) {
                         double* pl = g + bc * H * W;
                         for (std::size_t y = 0; y < h; ++y) {
                           for (std::size_t x = 0; x < w; ++x) {
                             const double v = 0.25 * d[(bc * h + y) * w + x];
                             pl[2 * y * W + 2 * x] += v;
                             pl[2 * y * W + 2 * x + 1] += v;
                             pl[(2 * y + 1) * W + 2 * x] += v;
                             pl[(2 * y + 1) * W + 2 * x + 1] += v;
                           }
                         }
                       }
                     });
}

Var upsample2(const Var& input) {
  require_rank(input, 4, "upsample2", "input");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2),
                    W = input.dim(3);
  const std::size_t Ho = 2 * H, Wo = 2 * W;
  std::vector<EdgeTap> ty(Ho), tx(Wo);
  for (std::size_t y = 0; y < Ho; ++y)
    ty[y] = edge_tap(0.5 * static_cast<double>(y) - 0.25, H);
  for (std::size_t x = 0; x < Wo; ++x)
    tx[x] = edge_tap(0.5 * static_cast<double>(x) - 0.25, W);
  Tensor out({B, C, Ho, Wo});
  const double* in = input.value().data().data();
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const double* pl = in + bc * H * W;
    for (std::size_t y = 0; y < Ho; ++y) {
      for (std::size_t x = 0; x < Wo; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        out.data()[(bc * Ho + y) * Wo + x] =
            (1 - a.w1) * ((1 - b.w1) * pl[a.i0 * W + b.i0] + b.w1 * pl[a.i0 * W + b.i1]) +
            a.w1 * ((1 - b.w1) * pl[a.i1 * W + b.i0] + b.w1 * pl[a.i1 * W + b.i1]);
      }
    }
  }
  return make_result(
      std::move(out), {input},
      [input, B, C, H, W, Ho, Wo, ty, tx](Node& self) mutable {
        double* g = input.grad_buffer().data().data();
        const double* d = self.grad.data().data();
        for (std::size_t bc = 0; bc < B * C; ++bc) {
          double* pl = g + bc * H * W;
          for (std::size_t y = 0; y < Ho; ++y) {
            for (std::size_t x = 0; x < Wo; ++x) {
              const auto& a = ty[y];
              const auto& b = tx[x];
              const double v = d[(bc * Ho + y) * Wo + x];
              pl[a.i0 * W + b.i0] += v * (1 - a.w1) * (1 - b.w1);
              pl[a.i0 * W + b.i1] += v * (1 - a.w1) * b.w1;
              pl[a.i1 * W + b.i0] += v * a.w1 * (1 - b.w1);
              pl[a.i1 * W + b.i1] += v * a.w1 * b.w1;
            }
          }
        }
      });
}

Var corr_volume(const Var& feat1, const Var& feat2) {
  require_rank(feat1, 4, "corr_volume", "feat1");
  require_same_shape(feat1, feat2, "corr_volume");
  if (feat1.dim(0) != 1) {
    throw DimensionError("corr_volume: batch axis must be 1, got " +
                         shape_str(feat1.shape()));
  }
  const std::size_t D = feat1.dim(1), h = feat1.dim(2), w = feat1.dim(3);
  const std::size_t N = h * w;
  Tensor out({N, 1, h, w});
  CMapM a(feat1.value().data().data(), D, N);
  CMapM b(feat2.value().data().data(), D, N);
  MapM c(out.data().data(), N, N);
  c.noalias() = a.transpose() * b;
  return make_result(std::move(out), {feat1, feat2},
                     [feat1, feat2, D, N](Node& self) mutable {
                       CMapM dc(self.grad.data().data(), N, N);
                       if (feat1.requires_grad()) {
                         MapM ga(feat1.grad_buffer().data().data(), D, N);
                         CMapM b(feat2.value().data().data(), D, N);
                         ga.noalias() += b * dc.transpose();
                       }
                       if (feat2.requires_grad()) {
                         MapM gb(feat2.grad_buffer().data().data(), D, N);
                         CMapM a(feat1.value().data().data(), D, N);
                         gb.noalias() += a * dc;
                       }
                     });
}

Var corr_lookup(const std::vector<Var>& levels, const Var& flow,
                std::size_t radius) {
  if (levels.empty()) throw DimensionError("corr_lookup: no pyramid levels");
  if (radius < 1) throw ParameterError("corr_lookup: radius must be >= 1");
  require_rank(flow, 4, "corr_lookup", "flow");
  const std::size_t h = flow.dim(2), w = flow.dim(3), N = h * w;
  if (flow.dim(0) != 1 || flow.dim(1) != 2) {
    throw DimensionError("corr_lookup: flow must be [1,2,h,w], got " +
                         shape_str(flow.shape()));
  }
  for (const auto& lv : levels) {
    require_rank(lv, 4, "corr_lookup", "level");
    if (lv.dim(0) != N || lv.dim(1) != 1) {
      throw DimensionError("corr_lookup: level " + shape_str(lv.shape()) +
                           " does not match source pixel count " +
                           std::to_string(N));
    }
  }
  const std::size_t side = 2 * radius + 1, taps = side * side;
  const std::size_t L = levels.size();
  const auto r = static_cast<double>(radius);
  Tensor out({1, L * taps, h, w});
  const double* fl = flow.value().data().data();
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t hl = levels[l].dim(2), wl = levels[l].dim(3);
    const double inv = 1.0 / static_cast<double>(std::size_t{1} << l);
    const double* vol = levels[l].value().data().data();
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t n = i * w + j;
        const double cx = (static_cast<double>(j) + fl[n]) * inv;
        const double cy = (static_cast<double>(i) + fl[N + n]) * inv;
        const double* sl = vol + n * hl * wl;
        for (std::size_t a = 0; a < side; ++a) {
          const EdgeTap ty = edge_tap(cy + static_cast<double>(a) - r, hl);
          for (std::size_t b = 0; b < side; ++b) {
            const EdgeTap tx = edge_tap(cx + static_cast<double>(b) - r, wl);
            const double top = (1 - tx.w1) * sl[ty.i0 * wl + tx.i0] + tx.w1 * sl[ty.i0 * wl + tx.i1];
            const double bot = (1 - tx.w1) * sl[ty.i1 * wl + tx.i0] + tx.w1 * sl[ty.i1 * wl + tx.i1];
            out.data()[(l * taps + a * side + b) * N + n] =
                (1 - ty.w1) * top + ty.w1 * bot;
          }
        }
      }
    }
  }
  std::vector<Var> inputs = levels;
  inputs.push_back(flow);
  return make_result(
      std::move(out), inputs,
      [levels, flow, h, w, N, side, taps, L, r](Node& self) mutable {
        const double* d = self.grad.data().data();
        const double* fl = flow.value().data().data();
        double* gf =
            flow.requires_grad() ? flow.grad_buffer().data().data() : nullptr;
        for (std::size_t l = 0; l < L; ++l) {
          const Var& lv = levels[l];
          const std::size_t hl = lv.dim(2), wl = lv.dim(3);
          const double inv = 1.0 / static_cast<double>(std::size_t{1} << l);
          const double* vol = lv.value().data().data();
          double* gv = lv.requires_grad() ? lv.grad_buffer().data().data() : nullptr;
          for (std::size_t i = 0; i < h; ++i) {
            for (std::size_t j = 0; j < w; ++j) {
              const std::size_t n = i * w + j;
              const double cx = (static_cast<double>(j) + fl[n]) * inv;
              const double cy = (static_cast<double>(i) + fl[N + n]) * inv;
              const double* sl = vol + n * hl * wl;
              double gx = 0.0, gy = 0.0;
              for (std::size_t a = 0; a < side; ++a) {
                const EdgeTap ty = edge_tap(cy + static_cast<double>(a) - r, hl);
                for (std::size_t b = 0; b < side; ++b) {
                  const EdgeTap tx = edge_tap(cx + static_cast<double>(b) - r, wl);
                  const double g = d[(l * taps + a * side + b) * N + n];
                  if (gv) {
                    double* gs = gv + n * hl * wl;
                    gs[ty.i0 * wl + tx.i0] += g * (1 - tx.w1) * (1 - ty.w1);
                    gs[ty.i0 * wl + tx.i1] += g * tx.w1 * (1 - ty.w1);
                    gs[ty.i1 * wl + tx.i0] += g * (1 - tx.w1) * ty.w1;
                    gs[ty.i1 * wl + tx.i1] += g * tx.w1 * ty.w1;
                  }
                  if (gf) {
                    const double v00 = sl[ty.i0 * wl + tx.i0];
                    const double v01 = sl[ty.i0 * wl + tx.i1];
                    const double v10 = sl[ty.i1 * wl + tx.i0];
                    const double v11 = sl[ty.i1 * wl + tx.i1];
                    if (tx.interior)
                      gx += g * ((1 - ty.w1) * (v01 - v00) + ty.w1 * (v11 - v10));
                    if (ty.interior)
                      gy += g * ((1 - tx.w1) * (v10 - v00) + tx.w1 * (v11 - v01));
                  }
                }
              }
              if (gf) {
                gf[n] += gx * inv;
                gf[N + n] += gy * inv;
              }
            }
          }
        }
      });
}

namespace {

// Zero-padded bilinear support of one sampling position.
struct ZeroTap {
  std::ptrdiff_t x0, y0;
  double wx, wy;
};

inline double zero_fetch(const double* pl, std::ptrdiff_t y, std::ptrdiff_t x,
                         std::size_t H, std::size_t W) {
  if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) ||
      x >= static_cast<std::ptrdiff_t>(W))
    return 0.0;
  return pl[y * static_cast<std::ptrdiff_t>(W) + x];
}

inline void zero_scatter(double* pl, std::ptrdiff_t y, std::ptrdiff_t x,
                         std::size_t H, std::size_t W, double v) {
  if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) ||
      x >= static_cast<std::ptrdiff_t>(W))
    return;
  pl[y * static_cast<std::ptrdiff_t>(W) + x] += v;
}

}  // namespace

Var deform_conv2d(const Var& input, const Var& offsets, const Var& mask,
                  const Var& weight, const Var& bias, std::size_t groups) {
  require_rank(input, 4, "deform_conv2d", "input");
  require_rank(offsets, 4, "deform_conv2d", "offsets");
  require_rank(mask, 4, "deform_conv2d", "mask");
  require_rank(weight, 4, "deform_conv2d", "weight");
  const std::size_t Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t O = weight.dim(0), k = weight.dim(2), kk = k * k;
  const std::size_t G = groups;
  if (input.dim(0) != 1) {
    throw DimensionError("deform_conv2d: batch axis must be 1, got " +
                         shape_str(input.shape()));
  }
  if (G == 0 || Cin % G != 0) {
    throw DimensionError("deform_conv2d: input channels (" +
                         std::to_string(Cin) + ") not divisible by groups (" +
                         std::to_string(G) + ")");
  }
  if (weight.dim(1) != Cin || weight.dim(3) != k || k % 2 == 0) {
    throw DimensionError("deform_conv2d: weight " + shape_str(weight.shape()) +
                         " incompatible with input " + shape_str(input.shape()));
  }
  if (offsets.dim(1) != 2 * G * kk || offsets.dim(2) != H || offsets.dim(3) != W) {
    throw DimensionError("deform_conv2d: offsets " + shape_str(offsets.shape()) +
                         " must be [1," + std::to_string(2 * G * kk) + "," +
                         std::to_string(H) + "," + std::to_string(W) + "]");
  }
  if (mask.dim(1) != G * kk || mask.dim(2) != H || mask.dim(3) != W) {
    throw DimensionError("deform_conv2d: mask " + shape_str(mask.shape()) +
                         " must be [1," + std::to_string(G * kk) + "," +
                         std::to_string(H) + "," + std::to_string(W) + "]");
  }
  if (bias.defined() && (bias.shape().size() != 1 || bias.dim(0) != O)) {
    throw DimensionError("deform_conv2d: bias " + shape_str(bias.shape()) +
                         " does not match output channels");
  }
  const std::size_t P = H * W, K = Cin * kk, cpg = Cin / G;
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);

  auto taps = std::make_shared<std::vector<ZeroTap>>(G * kk * P);
  const double* off = offsets.value().data().data();
  for (std::size_t g = 0; g < G; ++g) {
    for (std::size_t t = 0; t < kk; ++t) {
      const auto ky = static_cast<std::ptrdiff_t>(t / k) - pad;
      const auto kx = static_cast<std::ptrdiff_t>(t % k) - pad;
      const double* ox = off + ((g * kk + t) * 2) * P;
      const double* oy = ox + P;
      for (std::size_t p = 0; p < P; ++p) {
        const double sx = static_cast<double>(static_cast<std::ptrdiff_t>(p % W) + kx) + ox[p];
        const double sy = static_cast<double>(static_cast<std::ptrdiff_t>(p / W) + ky) + oy[p];
        const double fx = std::floor(sx), fy = std::floor(sy);
        (*taps)[(g * kk + t) * P + p] = {static_cast<std::ptrdiff_t>(fx),
                                         static_cast<std::ptrdiff_t>(fy),
                                         sx - fx, sy - fy};
      }
    }
  }

  // vals: raw samples, cols: mask-modulated samples, both [K, P].
  auto vals = std::make_shared<std::vector<double>>(K * P);
  auto cols = std::make_shared<std::vector<double>>(K * P);
  const double* in = input.value().data().data();
  const double* mk = mask.value().data().data();
  for (std::size_t c = 0; c < Cin; ++c) {
    const std::size_t g = c / cpg;
    const double* pl = in + c * P;
    for (std::size_t t = 0; t < kk; ++t) {
      const ZeroTap* tp = taps->data() + (g * kk + t) * P;
      const double* m = mk + (g * kk + t) * P;
      double* vrow = vals->data() + (c * kk + t) * P;
      double* crow = cols->data() + (c * kk + t) * P;
      for (std::size_t p = 0; p < P; ++p) {
        const ZeroTap& z = tp[p];
        const double v =
            (1 - z.wy) * ((1 - z.wx) * zero_fetch(pl, z.y0, z.x0, H, W) +
                          z.wx * zero_fetch(pl, z.y0, z.x0 + 1, H, W)) +
            z.wy * ((1 - z.wx) * zero_fetch(pl, z.y0 + 1, z.x0, H, W) +
                    z.wx * zero_fetch(pl, z.y0 + 1, z.x0 + 1, H, W));
        vrow[p] = v;
        crow[p] = m[p] * v;
      }
    }
  }

  Tensor out({1, O, H, W});
  {
    CMapM wm(weight.value().data().data(), O, K);
    CMapM cm(cols->data(), K, P);
    MapM om(out.data().data(), O, P);
    om.noalias() = wm * cm;
    if (bias.defined()) {
      for (std::size_t o = 0; o < O; ++o) om.row(o).array() += bias.value()[o];
    }
  }

  return make_result(
      std::move(out), {input, offsets, mask, weight, bias},
      [input, offsets, mask, weight, bias, taps, vals, cols, Cin, H, W, O, kk,
       P, K, cpg](Node& self) mutable {
        CMapM dout(self.grad.data().data(), O, P);
        if (weight.requires_grad()) {
          MapM gw(weight.grad_buffer().data().data(), O, K);
          gw.noalias() += dout * CMapM(cols->data(), K, P).transpose();
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_buffer().data();
          for (std::size_t o = 0; o < O; ++o) gb[o] += dout.row(o).sum();
        }
        const bool need_in = input.requires_grad();
        const bool need_off = offsets.requires_grad();
        const bool need_mask = mask.requires_grad();
        if (!need_in && !need_off && !need_mask) return;
        MatRM dcol = CMapM(weight.value().data().data(), O, K).transpose() * dout;
        const double* in = input.value().data().data();
        const double* mk = mask.value().data().data();
        double* gin = need_in ? input.grad_buffer().data().data() : nullptr;
        double* goff = need_off ? offsets.grad_buffer().data().data() : nullptr;
        double* gmask = need_mask ? mask.grad_buffer().data().data() : nullptr;
        for (std::size_t c = 0; c < Cin; ++c) {
          const std::size_t g = c / cpg;
          const double* pl = in + c * P;
          for (std::size_t t = 0; t < kk; ++t) {
            const std::size_t gt = g * kk + t;
            const ZeroTap* tp = taps->data() + gt * P;
            const double* m = mk + gt * P;
            const double* drow = dcol.data() + (c * kk + t) * P;
            const double* vrow = vals->data() + (c * kk + t) * P;
            for (std::size_t p = 0; p < P; ++p) {
              const double dc = drow[p];
              if (dc == 0.0) continue;
              if (gmask) gmask[gt * P + p] += dc * vrow[p];
              const double dv = dc * m[p];
              const ZeroTap& z = tp[p];
              if (gin) {
                double* gp = gin + c * P;
                zero_scatter(gp, z.y0, z.x0, H, W, dv * (1 - z.wx) * (1 - z.wy));
                zero_scatter(gp, z.y0, z.x0 + 1, H, W, dv * z.wx * (1 - z.wy));
                zero_scatter(gp, z.y0 + 1, z.x0, H, W, dv * (1 - z.wx) * z.wy);
                zero_scatter(gp, z.y0 + 1, z.x0 + 1, H, W, dv * z.wx * z.wy);
              }
              if (goff) {
                const double v00 = zero_fetch(pl, z.y0, z.x0, H, W);
                const double v01 = zero_fetch(pl, z.y0, z.x0 + 1, H, W);
                const double v10 = zero_fetch(pl, z.y0 + 1, z.x0, H, W);
                const double v11 = zero_fetch(pl, z.y0 + 1, z.x0 + 1, H, W);
                goff[(gt * 2) * P + p] +=
                    dv * ((1 - z.wy) * (v01 - v00) + z.wy * (v11 - v10));
                goff[(gt * 2 + 1) * P + p] +=
                    dv * ((1 - z.wx) * (v10 - v00) + z.wx * (v11 - v01));
              }
            }
          }
        }
      });
}

Var sum(const Var& x) {
  Tensor out({1}, x.value().sum());
  return make_result(std::move(out), {x}, [x](Node& self) mutable {
    const double d = self.grad[0];
    for (double& g : x.grad_buffer().data()) g += d;
  });
}

Var mean(const Var& x) {
  const double n = static_cast<double>(x.numel());
  Tensor out({1}, x.value().sum() / n);
  return make_result(std::move(out), {x}, [x, n](Node& self) mutable {
    const double d = self.grad[0] / n;
    for (double& g : x.grad_buffer().data()) g += d;
  });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
  if (weights.numel() != x.numel()) {
    throw DimensionError("weighted_sum: weights " + shape_str(weights.shape()) +
                         " vs input " + shape_str(x.shape()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) s += x.value()[i] * weights[i];
  return make_result(Tensor({1}, s), {x}, [x, weights](Node& self) mutable {
    const double d = self.grad[0];
    auto g = x.grad_buffer().data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * weights[i];
  });
}

Var mse_loss(const Var& pred, const Var& target) {
  require_same_shape(pred, target, "mse_loss");
  const double n = static_cast<double>(pred.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double e = pred.value()[i] - target.value()[i];
    s += e * e;
  }
  return make_result(Tensor({1}, s / n), {pred, target},
                     [pred, target, n](Node& self) mutable {
                       const double d = self.grad[0] * 2.0 / n;
                       for (std::size_t i = 0; i < pred.numel(); ++i) {
                         const double e = pred.value()[i] - target.value()[i];
                         if (pred.requires_grad()) pred.grad_buffer()[i] += d * e;
                         if (target.requires_grad()) target.grad_buffer()[i] -= d * e;
                       }
                     });
}

Var l1_loss(const Var& pred, const Var& target) {
  require_same_shape(pred, target, "l1_loss");
  const double n = static_cast<double>(pred.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i)
    s += std::abs(pred.value()[i] - target.value()[i]);
  return make_result(Tensor({1}, s / n), {pred, target},
                     [pred, target, n](Node& self) mutable {
                       const double d = self.grad[0] / n;
                       for (std::size_t i = 0; i < pred.numel(); ++i) {
                         const double e = pred.value()[i] - target.value()[i];
                         const double sg = e > 0 ? 1.0 : (e < 0 ? -1.0 : 0.0);
                         if (pred.requires_grad()) pred.grad_buffer()[i] += d * sg;
                         if (target.requires_grad()) target.grad_buffer()[i] -= d * sg;
                       }
                     });
}

}  // namespace cascade
