#pragma once

#include <array>
#include <random>
#include <vector>

#include "cascade/param_set.hpp"
#include "cascade/patch_match.hpp"

namespace cascade {

struct FlowConfig {
  std::size_t channels = 1;
  std::size_t feature_dim = 32;
  std::size_t context_dim = 32;
  std::size_t hidden_dim = 48;
  std::size_t radius = 3;

  static constexpr std::size_t kLevels = 4;
  /// Feature maps are at 1/2 patch resolution.
  static constexpr std::size_t kDownsample = 2;

  std::size_t lookup_channels() const {
    return kLevels * (2 * radius + 1) * (2 * radius + 1);
  }
  std::size_t gru_input_channels() const {
    return lookup_channels() + 2 + context_dim;
  }
  /// Smallest patch-size unit: encoder stride times the deepest pyramid level.
  std::size_t patch_unit() const { return kDownsample << (kLevels - 1); }
};

/// Flow iterate f_k at feature resolution, [1,2,h,w] (channel 0 = x).
struct FlowField {
  Var flow;
  std::size_t iteration = 0;
};

/// C^1..C^4; level l is [h*w, 1, h/2^l, w/2^l].
struct CorrelationPyramid {
  std::vector<Var> levels;
};

struct GruState {
  Var h;        // [1,hidden,h,w]
  Var context;  // [1,cc,h,w], already activated
};

struct GruStep {
  GruState state;
  Var delta_flow;
  Var z;
  Var r;
};

/// C^1 is the exact all-pairs volume; deeper levels average-pool the target axes.
CorrelationPyramid build_corr_pyramid(const Var& feat1, const Var& feat2);

/// Lookup of all pyramid levels around the flow-displaced position.
Var lookup(const CorrelationPyramid& pyr, const FlowField& flow,
           std::size_t radius);

class FlowNet;

/// Iterates flow for one (reference, supporting) pair. Each `step` consumes
/// one GRU update and returns the next iterate.
class FlowRefiner {
 public:
  FlowRefiner(const FlowNet& net, const Var& ref_pre, const Var& ref_noisy,
              const Var& sup_pre, const Var& sup_noisy);

  const FlowField& current() const { return flow_; }
  FlowField step();

 private:
  const FlowNet* net_;
  CorrelationPyramid pyramid_;
  GruState state_;
  FlowField flow_;
};

/// Feature and context encoders plus the shared conv-GRU update operator.
/// Parameters live under "flow/".
class FlowNet {
 public:
  FlowNet(ParamSet& params, const FlowConfig& config, std::mt19937_64& rng);

  /// Recovers the configuration from the parameter shapes in `params`.
  static FlowConfig infer_config(const ParamSet& params);

  const FlowConfig& config() const { return config_; }

  /// concat(pre, noisy) [1,2C,p,p] -> [1,D,p/2,p/2].
  Var encode_features(const Var& patch_pre, const Var& patch_noisy) const;
  /// [1,C,p,p] -> [1,cc,p/2,p/2] (before activation).
  Var encode_context(const Var& ref_patch) const;

  /// h_0 = tanh(Conv1x1(context)); the GRU receives relu(context).
  GruState init_state(const Var& context) const;

  /// One conv-GRU update with x_t = concat(lookup, flow, context).
  GruStep gru_update(const GruState& state, const Var& x_t) const;

  /// Flow iterates f_1..f_n for each supporting frame (index 0 = t-1).
  std::array<std::vector<FlowField>, 2> refine_flow(const PatchTriplet& triplet,
                                                    std::size_t n_iters) const;

 private:
  friend class FlowRefiner;
  void check_patch(const Var& patch, const char* what) const;

  FlowConfig config_;
  std::array<ConvLayer, 3> feature_;
  std::array<ConvLayer, 3> context_;
  ConvLayer hidden_init_;
  ConvLayer gate_z_, gate_r_, gate_h_;
  ConvLayer head1_, head2_;
};

}  // namespace cascade
