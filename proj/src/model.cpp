#include "cascade/model.hpp"

namespace cascade {

ModelConfig ModelConfig::from(const KeyValueConfig& kv) {
  ModelConfig c;
  const std::size_t channels = kv.get_size("model_channels", c.pre.channels);
  c.pre.channels = c.flow.channels = c.recon.channels = channels;
  c.pre.depth = kv.get_size("model_pre_depth", c.pre.depth);
  c.pre.base_width = kv.get_size("model_pre_width", c.pre.base_width);
  c.flow.feature_dim = kv.get_size("model_feature_dim", c.flow.feature_dim);
  c.flow.context_dim = kv.get_size("model_context_dim", c.flow.context_dim);
  c.flow.hidden_dim = kv.get_size("model_hidden_dim", c.flow.hidden_dim);
  c.flow.radius = kv.get_size("model_radius", c.flow.radius);
  c.recon.features = kv.get_size("model_recon_features", c.recon.features);
  c.recon.groups = kv.get_size("model_groups", c.recon.groups);
  c.recon.fusion_blocks = kv.get_size("model_fusion_blocks", c.recon.fusion_blocks);
  return c;
}

const std::set<std::string>& ModelConfig::keys() {
  static const std::set<std::string> k{
      "model_channels",   "model_pre_depth",      "model_pre_width",
      "model_feature_dim", "model_context_dim",   "model_hidden_dim",
      "model_radius",     "model_recon_features", "model_groups",
      "model_fusion_blocks"};
  return k;
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  std::mt19937_64 rng(seed);
  build(rng);
}

Model::Model(ParamSet params) : params_(std::move(params)) {
  const Shape& out = params_.get("pre/out.w").shape();
  config_.pre.channels = out[0];
  config_.pre.base_width = params_.get("pre/enc0a.w").shape()[0];
  config_.pre.depth = 0;
  while (params_.contains("pre/enc" + std::to_string(config_.pre.depth) + "a.w"))
    ++config_.pre.depth;
  config_.flow = FlowNet::infer_config(params_);
  config_.recon = ReconNet::infer_config(params_);
  const std::size_t before = params_.size();
  std::mt19937_64 rng(0);
  build(rng);
  if (params_.size() != before) {
    throw ParameterError("parameter file is missing " +
                         std::to_string(params_.size() - before) +
                         " tensors of the inferred architecture");
  }
}

void Model::build(std::mt19937_64& rng) {
  pre_ = std::make_unique<PreDenoiser>(params_, config_.pre, rng);
  flow_ = std::make_unique<FlowNet>(params_, config_.flow, rng);
  recon_ = std::make_unique<ReconNet>(params_, config_.recon, rng);
}

std::vector<IterationOutput> Model::process(const PatchTriplet& triplet,
                                            const ExitPolicy& policy) const {
  return run_cascade(triplet, lazy_flows(*flow_, triplet), *recon_, policy);
}

}  // namespace cascade
