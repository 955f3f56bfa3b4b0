#include "cascade/recon.hpp"

#include <memory>

#include "cascade/ops.hpp"

namespace cascade {

Var patch_flow(const FlowField& flow) {
  return affine(upsample2(flow.flow), double(FlowConfig::kDownsample));
}

ReconNet::ReconNet(ParamSet& params, const ReconConfig& config,
                   std::mt19937_64& rng)
    : config_(config) {
  const std::size_t C = config.channels, F = config.features, G = config.groups;
  if (C == 0 || F == 0 || G == 0 || F % G != 0) {
    throw ParameterError("ReconNet: features (" + std::to_string(F) +
                         ") must be a positive multiple of groups (" +
                         std::to_string(G) + ")");
  }
  feat1_ = ConvLayer::bind(params, "recon/feat1", 2 * C, F, 3, rng);
  feat2_ = ConvLayer::bind(params, "recon/feat2", F, F, 3, rng);
  off1_ = ConvLayer::bind(params, "recon/off1", 2 * F, F, 3, rng);
  const bool fresh = !params.contains("recon/off2.w");
  off2_ = ConvLayer::bind(params, "recon/off2", F, 3 * config.taps(), 3, rng);
  if (fresh) {
    // Start from pure flow offsets and mask 0.5.
    off2_.weight.mutable_value().fill(0.0);
    off2_.bias.mutable_value().fill(0.0);
  }
  dcn_ = ConvLayer::bind(params, "recon/dcn", F, F, 3, rng);
  fuse_in_ = ConvLayer::bind(params, "recon/fuse_in", 3 * F, F, 3, rng);
  for (std::size_t b = 0; b < config.fusion_blocks; ++b) {
    const std::string name = "recon/res" + std::to_string(b);
    blocks_.emplace_back(ConvLayer::bind(params, name + "a", F, F, 3, rng),
                         ConvLayer::bind(params, name + "b", F, F, 3, rng));
  }
  s1_ = ConvLayer::bind(params, "recon/s1", F, F, 3, rng);
  s2_ = ConvLayer::bind(params, "recon/s2", F, C, 3, rng);
  u1_ = ConvLayer::bind(params, "recon/u1", F, F, 3, rng);
  const bool fresh_u = !params.contains("recon/u2.w");
  u2_ = ConvLayer::bind(params, "recon/u2", F, 1, 3, rng);
  if (fresh_u) u2_.bias.mutable_value().fill(-4.0);  // sigma^2 ~ 0.02
}

ReconConfig ReconNet::infer_config(const ParamSet& params) {
  ReconConfig c;
  const Shape& f = params.get("recon/feat1.w").shape();
  c.features = f[0];
  c.channels = f[1] / 2;
  const Shape& off = params.get("recon/off2.w").shape();
  c.groups = off[0] / (3 * ReconConfig::kKernel * ReconConfig::kKernel);
  c.fusion_blocks = 0;
  while (params.contains("recon/res" + std::to_string(c.fusion_blocks) + "a.w"))
    ++c.fusion_blocks;
  return c;
}

Var ReconNet::extract(const Var& patch_noisy, const Var& patch_pre) const {
  if (patch_noisy.shape() != patch_pre.shape()) {
    throw DimensionError("extract: noisy " + shape_str(patch_noisy.shape()) +
                         " vs pre " + shape_str(patch_pre.shape()));
  }
  if (patch_noisy.shape().size() != 4 || patch_noisy.dim(1) != config_.channels) {
    throw DimensionError("extract: expected [1," + std::to_string(config_.channels) +
                         ",p,p], got " + shape_str(patch_noisy.shape()));
  }
  const Var x = affine(concat_channels({patch_noisy, patch_pre}), 1.0, -0.5);
  return feat2_(relu(feat1_(x)));
}

Var ReconNet::warp_features(const Var& m, const Var& flow) { return warp(m, flow); }

Var ReconNet::offset_mask(const Var& r_k, const Var& m_warped) const {
  if (r_k.shape() != m_warped.shape()) {
    throw DimensionError("offset_mask: r_k " + shape_str(r_k.shape()) +
                         " vs warped " + shape_str(m_warped.shape()));
  }
  return off2_(relu(off1_(concat_channels({r_k, m_warped}))));
}

Var ReconNet::deform(const Var& m_sup, const Var& offsets, const Var& mask) const {
  return deform_conv2d(m_sup, offsets, mask, dcn_.weight, dcn_.bias,
                       config_.groups);
}

Var ReconNet::flow_guided_dcn(const Var& m_sup, const Var& m_warped,
                              const Var& r_k, const Var& flow) const {
  if (m_sup.shape() != r_k.shape() || flow.shape().size() != 4 ||
      flow.dim(1) != 2 || flow.dim(2) != m_sup.dim(2) ||
      flow.dim(3) != m_sup.dim(3)) {
    throw DimensionError("flow_guided_dcn: features " + shape_str(m_sup.shape()) +
                         ", reference " + shape_str(r_k.shape()) + ", flow " +
                         shape_str(flow.shape()));
  }
  const std::size_t K = config_.taps();
  const Var raw = offset_mask(r_k, m_warped);
  const double limit = 0.5 * static_cast<double>(m_sup.dim(3));
  const Var offsets =
      clamp(add(tile_channels(flow, K), slice_channels(raw, 0, 2 * K)), -limit, limit);
  const Var mask = sigmoid(slice_channels(raw, 2 * K, K));
  return deform(m_sup, offsets, mask);
}

Var ReconNet::fuse(const Var& aligned_prev, const Var& r_k,
                   const Var& aligned_next) const {
  if (aligned_prev.shape() != r_k.shape() || aligned_next.shape() != r_k.shape()) {
    throw DimensionError("fuse: shapes " + shape_str(aligned_prev.shape()) + ", " +
                         shape_str(r_k.shape()) + ", " +
                         shape_str(aligned_next.shape()) + " differ");
  }
  Var x = fuse_in_(concat_channels({aligned_prev, r_k, aligned_next}));
  for (const auto& [a, b] : blocks_) x = add(x, b(relu(a(x))));
  return x;
}

std::pair<Var, Var> ReconNet::heads(const Var& r_next, const Var& ref_pre) const {
  Var s = add(ref_pre, s2_(relu(s1_(r_next))));
  Var u = u2_(relu(u1_(r_next)));
  return {s, u};
}

FlowSource precomputed_flows(std::array<std::vector<FlowField>, 2> flows) {
  auto shared = std::make_shared<std::array<std::vector<FlowField>, 2>>(std::move(flows));
  return [shared](std::size_t k) -> std::array<FlowField, 2> {
    const auto& f = *shared;
    if (k >= f[0].size() || k >= f[1].size()) {
      throw ParameterError("flow iterate " + std::to_string(k + 1) +
                           " requested but only " +
                           std::to_string(std::min(f[0].size(), f[1].size())) +
                           " supplied");
    }
    return {f[0][k], f[1][k]};
  };
}

FlowSource lazy_flows(const FlowNet& net, const PatchTriplet& triplet) {
  auto refiners = std::make_shared<std::array<FlowRefiner, 2>>(std::array<FlowRefiner, 2>{
      FlowRefiner(net, triplet.ref_pre, triplet.ref_noisy, triplet.sup_pre[0],
                  triplet.sup_noisy[0]),
      FlowRefiner(net, triplet.ref_pre, triplet.ref_noisy, triplet.sup_pre[1],
                  triplet.sup_noisy[1])});
  return [refiners](std::size_t k) -> std::array<FlowField, 2> {
    auto& r = *refiners;
    if (r[0].current().iteration != k) {
      throw ParameterError("lazy flow source must be consumed in order");
    }
    return {r[0].step(), r[1].step()};
  };
}

std::vector<IterationOutput> run_cascade(const PatchTriplet& triplet,
                                         const FlowSource& flows,
                                         const ReconNet& net,
                                         const ExitPolicy& policy) {
  policy.validate();
  const Var r0 = net.extract(triplet.ref_noisy, triplet.ref_pre);
  std::array<Var, 2> m_sup;
  for (std::size_t s = 0; s < 2; ++s)
    m_sup[s] = net.extract(triplet.sup_noisy[s], triplet.sup_pre[s]);

  std::vector<IterationOutput> out;
  Var r = r0;
  for (std::size_t k = 0; k < policy.max_iters; ++k) {
    IterationOutput it;
    it.flows = flows(k);
    std::array<Var, 2> aligned;
    for (std::size_t s = 0; s < 2; ++s) {
      const Var f = patch_flow(it.flows[s]);
      const Var warped = ReconNet::warp_features(m_sup[s], f);
      aligned[s] = net.flow_guided_dcn(m_sup[s], warped, r, f);
    }
    it.r_next = net.fuse(aligned[0], r, aligned[1]);
    std::tie(it.s, it.u) = net.heads(it.r_next, triplet.ref_pre);
    it.decision = decide_exit(it.u.value(), policy, k + 1);
    r = it.r_next;
    const bool stop = it.decision.exit;
    out.push_back(std::move(it));
    if (stop) break;
  }
  return out;
}

}  // namespace cascade
