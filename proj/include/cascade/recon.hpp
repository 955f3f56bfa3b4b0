#pragma once

#include <array>
#include <functional>
#include <random>
#include <vector>

#include "cascade/flow.hpp"
#include "cascade/gate.hpp"
#include "cascade/param_set.hpp"
#include "cascade/patch_match.hpp"

namespace cascade {

struct ReconConfig {
  std::size_t channels = 1;
  std::size_t features = 32;
  std::size_t groups = 4;
  std::size_t fusion_blocks = 2;

  static constexpr std::size_t kKernel = 3;
  std::size_t taps() const { return groups * kKernel * kKernel; }
};

/// Output of one reconstruction block.
struct IterationOutput {
  Var r_next;  // [1,F,p,p]
  Var s;       // [1,C,p,p]
  Var u;       // [1,1,p,p], ln sigma^2
  std::array<FlowField, 2> flows;
  GateDecision decision;
};

/// Flow feature-resolution iterate -> patch resolution (x2 upsample, x2 scale).
Var patch_flow(const FlowField& flow);

/// Restoration feature extractor, DCN alignment, fusion and heads. One set of
/// weights serves every cascade iteration and both supporting frames.
/// Parameters live under "recon/".
class ReconNet {
 public:
  ReconNet(ParamSet& params, const ReconConfig& config, std::mt19937_64& rng);

  static ReconConfig infer_config(const ParamSet& params);
  const ReconConfig& config() const { return config_; }

  /// concat(noisy, pre) -> [1,F,p,p].
  Var extract(const Var& patch_noisy, const Var& patch_pre) const;

  /// Backward warp with clamped borders; `flow` at patch resolution.
  static Var warp_features(const Var& m, const Var& flow);

  /// Offsets = flow + learned residual (clamped to +-p/2), mask = sigmoid;
  /// deformable conv of the unwarped `m_sup`.
  Var flow_guided_dcn(const Var& m_sup, const Var& m_warped, const Var& r_k,
                      const Var& flow) const;

  /// The deformable conv alone, for explicit offsets [1,2GK,p,p] and mask
  /// [1,GK,p,p].
  Var deform(const Var& m_sup, const Var& offsets, const Var& mask) const;

  /// Raw offset/mask predictions [1,3GK,p,p] from concat(r_k, m_warped).
  Var offset_mask(const Var& r_k, const Var& m_warped) const;

  Var fuse(const Var& aligned_prev, const Var& r_k, const Var& aligned_next) const;

  /// s = ref_pre + residual, u = ln sigma^2.
  std::pair<Var, Var> heads(const Var& r_next, const Var& ref_pre) const;

 private:
  ReconConfig config_;
  ConvLayer feat1_, feat2_;
  ConvLayer off1_, off2_;
  ConvLayer dcn_;
  ConvLayer fuse_in_;
  std::vector<std::pair<ConvLayer, ConvLayer>> blocks_;
  ConvLayer s1_, s2_, u1_, u2_;
};

/// Supplies the flow iterates consumed by iteration k (0-based): f_{k+1} for
/// the t-1 and t+1 supports. Called with k = 0, 1, 2, ... in order.
using FlowSource = std::function<std::array<FlowField, 2>(std::size_t k)>;

/// Flow iterates computed up front (index 0 = t-1), each of length >= max_iters.
FlowSource precomputed_flows(std::array<std::vector<FlowField>, 2> flows);

/// Lazily advances one FlowRefiner per support, so an early exit also skips
/// the remaining GRU updates.
FlowSource lazy_flows(const FlowNet& net, const PatchTriplet& triplet);

/// Runs reconstruction blocks until `policy` exits (at most max_iters).
std::vector<IterationOutput> run_cascade(const PatchTriplet& triplet,
                                         const FlowSource& flows,
                                         const ReconNet& net,
                                         const ExitPolicy& policy);

}  // namespace cascade
