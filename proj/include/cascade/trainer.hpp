#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cascade/dataset.hpp"
#include "cascade/gate.hpp"
#include "cascade/model.hpp"

namespace cascade {

struct AdamWConfig {
  double lr = 2e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// First/second moments and step counts, aligned with ParamSet order.
struct AdamWState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::vector<std::size_t> t;
};

/// Decoupled-weight-decay Adam on every parameter accepted by `trainable`
/// (all when empty), reading gradients from the parameters. Skipped
/// parameters keep their values and moments. A non-finite gradient throws
/// DomainError naming the parameter before anything is updated.
void adamw_step(ParamSet& params, AdamWState& state, const AdamWConfig& config,
                const std::function<bool(const std::string&)>& trainable = {});

struct TrainConfig {
  /// Joint cascade steps.
  std::size_t steps = 2000;
  /// Pre-denoiser pretraining steps (MSE).
  std::size_t pre_steps = 0;
  /// Flow pretraining steps on known translations.
  std::size_t flow_steps = 0;
  std::size_t batch = 1;
  /// Joint steps during which pre/ and flow/ stay frozen.
  std::size_t freeze_steps = 300;
  std::uint64_t seed = 0;

  double lr = 2e-5;
  double pre_lr = 2e-5;
  double flow_lr = 2e-5;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;

  double gamma = 0.8;
  std::size_t max_iters = 12;
  double threshold = 0.002;
  bool exit_on_high = false;
  LossForm loss_form = LossForm::Printed;

  ModelConfig model;
  DataSpec data;
  /// Textures for flow pretraining; periodic and ramp textures are ambiguous
  /// under translation.
  std::vector<Texture> flow_textures{Texture::Perlin};

  static TrainConfig from(const KeyValueConfig& kv);
  static std::set<std::string> keys();
  void validate() const;
  /// Gate settings for inference; training itself always runs max_iters.
  ExitPolicy policy() const;
  AdamWConfig adamw(double rate) const;
};

struct TrainLogEntry {
  std::size_t step = 0;
  std::string stage;
  double loss = 0.0;
  /// Per-iteration eu losses (joint) or flow L1 errors (flow stage).
  std::vector<double> per_iter;
  double grad_norm = 0.0;
  /// Mean sigma^2 of the final iteration (joint stage only).
  double mean_sigma2 = 0.0;
  /// Iteration at which the inference gate would have exited (joint only).
  std::size_t exit_iteration = 0;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  std::size_t max_iters = 0;

  /// step,stage,loss,L1..LN,grad_norm,mean_sigma2,exit_iteration
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Runs the pre, flow and joint stages in order on `model`.
TrainLog train(const TrainConfig& config, Model& model);

struct TrainResult {
  ParamSet params;
  TrainLog log;
};

/// Builds a fresh model from config.model and config.seed, then trains it.
TrainResult train(const TrainConfig& config);

/// Reference patch at the DataSpec origin with supports cropped at the same place
/// (no matching); `pre` frames are [1,C,H,W].
PatchTriplet colocated_triplet(const std::array<Var, 3>& noisy,
                               const std::array<Var, 3>& pre, PixelPos origin,
                               std::size_t patch);

/// Ground-truth feature-resolution flow for a colocated triplet: +d/2 towards
/// t+1 and -d/2 towards t-1.
std::array<Tensor, 2> colocated_flow_truth(const std::array<double, 2>& motion,
                                           std::size_t patch);

}  // namespace cascade
