#include "cascade/flow.hpp"

#include <cmath>

#include "cascade/ops.hpp"

namespace cascade {

CorrelationPyramid build_corr_pyramid(const Var& feat1, const Var& feat2) {
  if (feat1.shape() != feat2.shape()) {
    throw DimensionError("build_corr_pyramid: feature shapes " +
                         shape_str(feat1.shape()) + " and " +
                         shape_str(feat2.shape()) + " differ");
  }
  CorrelationPyramid pyr;
  pyr.levels.push_back(corr_volume(feat1, feat2));
  for (std::size_t l = 1; l < FlowConfig::kLevels; ++l)
    pyr.levels.push_back(avg_pool2(pyr.levels.back()));
  return pyr;
}

Var lookup(const CorrelationPyramid& pyr, const FlowField& flow,
           std::size_t radius) {
  if (radius == 0) throw ParameterError("lookup: radius must be >= 1");
  return corr_lookup(pyr.levels, flow.flow, radius);
}

FlowNet::FlowNet(ParamSet& params, const FlowConfig& config,
                 std::mt19937_64& rng)
    : config_(config) {
  const std::size_t C = config.channels, D = config.feature_dim;
  const std::size_t cc = config.context_dim, hd = config.hidden_dim;
  if (C == 0 || D == 0 || cc == 0 || hd == 0 || config.radius == 0) {
    throw ParameterError("FlowNet: channel widths and radius must be > 0");
  }
  feature_ = {ConvLayer::bind(params, "flow/fenc1", 2 * C, D, 3, rng),
              ConvLayer::bind(params, "flow/fenc2", D, D, 3, rng, 2),
              ConvLayer::bind(params, "flow/fenc3", D, D, 3, rng)};
  context_ = {ConvLayer::bind(params, "flow/cenc1", C, cc, 3, rng),
              ConvLayer::bind(params, "flow/cenc2", cc, cc, 3, rng, 2),
              ConvLayer::bind(params, "flow/cenc3", cc, cc, 3, rng)};
  hidden_init_ = ConvLayer::bind(params, "flow/hinit", cc, hd, 1, rng);
  const std::size_t in = hd + config.gru_input_channels();
  gate_z_ = ConvLayer::bind(params, "flow/gru_z", in, hd, 3, rng);
  gate_r_ = ConvLayer::bind(params, "flow/gru_r", in, hd, 3, rng);
  gate_h_ = ConvLayer::bind(params, "flow/gru_h", in, hd, 3, rng);
  head1_ = ConvLayer::bind(params, "flow/head1", hd, hd, 3, rng);
  const bool fresh = !params.contains("flow/head2.w");
  head2_ = ConvLayer::bind(params, "flow/head2", hd, 2, 3, rng);
  if (fresh) {
    // Small initial updates keep early iterates near zero flow.
    for (double& v : head2_.weight.mutable_value().data()) v *= 0.1;
  }
}

FlowConfig FlowNet::infer_config(const ParamSet& params) {
  FlowConfig c;
  const Shape& f = params.get("flow/fenc1.w").shape();
  const Shape& ctx = params.get("flow/cenc1.w").shape();
  const Shape& h = params.get("flow/hinit.w").shape();
  const Shape& z = params.get("flow/gru_z.w").shape();
  c.channels = ctx[1];
  c.feature_dim = f[0];
  c.context_dim = ctx[0];
  c.hidden_dim = h[0];
  // z input = hidden + L(2r+1)^2 + 2 + cc
  const std::size_t taps = (z[1] - c.hidden_dim - 2 - c.context_dim) / FlowConfig::kLevels;
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(double(taps))));
  if (side * side != taps || side % 2 == 0) {
    throw DimensionError("flow/gru_z.w input width " + std::to_string(z[1]) +
                         " does not match any lookup radius");
  }
  c.radius = (side - 1) / 2;
  return c;
}

void FlowNet::check_patch(const Var& patch, const char* what) const {
  const Shape& s = patch.shape();
  if (s.size() != 4 || s[0] != 1 || s[1] != config_.channels) {
    throw DimensionError(std::string(what) + ": expected [1," +
                         std::to_string(config_.channels) + ",p,p], got " +
                         shape_str(s));
  }
  const std::size_t unit = config_.patch_unit();
  if (s[2] % unit != 0 || s[3] % unit != 0) {
    throw DimensionError(std::string(what) + ": patch extents " +
                         std::to_string(s[2]) + "x" + std::to_string(s[3]) +
                         " must be divisible by " + std::to_string(unit));
  }
}

Var FlowNet::encode_features(const Var& patch_pre, const Var& patch_noisy) const {
  check_patch(patch_pre, "encode_features");
  if (patch_pre.shape() != patch_noisy.shape()) {
    throw DimensionError("encode_features: pre " + shape_str(patch_pre.shape()) +
                         " vs noisy " + shape_str(patch_noisy.shape()));
  }
  // Inputs are centred on mid-grey.
  Var x = affine(concat_channels({patch_pre, patch_noisy}), 1.0, -0.5);
  x = relu(feature_[0](x));
  x = relu(feature_[1](x));
  return feature_[2](x);
}

Var FlowNet::encode_context(const Var& ref_patch) const {
  check_patch(ref_patch, "encode_context");
  Var x = relu(context_[0](affine(ref_patch, 1.0, -0.5)));
  x = relu(context_[1](x));
  return context_[2](x);
}

GruState FlowNet::init_state(const Var& context) const {
  return {tanh(hidden_init_(context)), relu(context)};
}

GruStep FlowNet::gru_update(const GruState& state, const Var& x_t) const {
  if (x_t.shape().size() != 4 || x_t.dim(1) != config_.gru_input_channels()) {
    throw DimensionError("gru_update: x_t must have " +
                         std::to_string(config_.gru_input_channels()) +
                         " channels, got " + shape_str(x_t.shape()));
  }
  if (state.h.dim(2) != x_t.dim(2) || state.h.dim(3) != x_t.dim(3)) {
    throw DimensionError("gru_update: hidden " + shape_str(state.h.shape()) +
                         " vs input " + shape_str(x_t.shape()));
  }
  const Var hx = concat_channels({state.h, x_t});
  GruStep out;
  out.z = sigmoid(gate_z_(hx));
  out.r = sigmoid(gate_r_(hx));
  const Var cand = tanh(gate_h_(concat_channels({mul(out.r, state.h), x_t})));
  // h = (1 - z) h + z cand = h + z (cand - h)
  const Var h = add(state.h, mul(out.z, sub(cand, state.h)));
  out.state = {h, state.context};
  out.delta_flow = head2_(relu(head1_(h)));
  return out;
}

FlowRefiner::FlowRefiner(const FlowNet& net, const Var& ref_pre,
                         const Var& ref_noisy, const Var& sup_pre,
                         const Var& sup_noisy)
    : net_(&net) {
  const Var f1 = net.encode_features(ref_pre, ref_noisy);
  const Var f2 = net.encode_features(sup_pre, sup_noisy);
  pyramid_ = build_corr_pyramid(f1, f2);
  state_ = net.init_state(net.encode_context(ref_pre));
  flow_.flow = Var(Tensor({1, 2, f1.dim(2), f1.dim(3)}, 0.0));
  flow_.iteration = 0;
}

FlowField FlowRefiner::step() {
  const FlowConfig& cfg = net_->config();
  // Iterates are detached before lookup and update; each delta is trained
  // through the hidden state.
  const FlowField base{flow_.flow.detach(), flow_.iteration};
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.feature_dim));
  const Var corr = affine(lookup(pyramid_, base, cfg.radius), scale);
  const Var x = concat_channels({corr, base.flow, state_.context});
  GruStep s = net_->gru_update(state_, x);
  state_ = s.state;
  flow_ = {add(base.flow, s.delta_flow), flow_.iteration + 1};
  return flow_;
}

std::array<std::vector<FlowField>, 2> FlowNet::refine_flow(
    const PatchTriplet& triplet, std::size_t n_iters) const {
  if (n_iters == 0) throw ParameterError("refine_flow: n_iters must be >= 1");
  std::array<std::vector<FlowField>, 2> out;
  for (std::size_t s = 0; s < 2; ++s) {
    FlowRefiner ref(*this, triplet.ref_pre, triplet.ref_noisy,
                    triplet.sup_pre[s], triplet.sup_noisy[s]);
    for (std::size_t k = 0; k < n_iters; ++k) out[s].push_back(ref.step());
  }
  return out;
}

}  // namespace cascade
