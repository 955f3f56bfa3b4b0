#pragma once

#include <cstdint>
#include <memory>

#include "cascade/config.hpp"
#include "cascade/flow.hpp"
#include "cascade/predenoise.hpp"
#include "cascade/recon.hpp"

namespace cascade {

struct ModelConfig {
  PreDenoiserConfig pre;
  FlowConfig flow;
  ReconConfig recon;

  /// Reads model_* keys; missing keys keep the defaults.
  static ModelConfig from(const KeyValueConfig& kv);
  static const std::set<std::string>& keys();
};

/// Pre-denoiser, flow network and reconstruction network over one ParamSet.
class Model {
 public:
  Model(const ModelConfig& config, std::uint64_t seed);
  /// Rebuilds the networks around loaded parameters; the architecture is read
  /// from the parameter shapes.
  explicit Model(ParamSet params);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return config_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  const PreDenoiser& pre() const { return *pre_; }
  const FlowNet& flow() const { return *flow_; }
  const ReconNet& recon() const { return *recon_; }

  /// Flow-then-reconstruct for one triplet with lazily computed flow.
  std::vector<IterationOutput> process(const PatchTriplet& triplet,
                                       const ExitPolicy& policy) const;

 private:
  void build(std::mt19937_64& rng);

  ModelConfig config_;
  ParamSet params_;
  std::unique_ptr<PreDenoiser> pre_;
  std::unique_ptr<FlowNet> flow_;
  std::unique_ptr<ReconNet> recon_;
};

}  // namespace cascade
