#include "cascade/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "cascade/ops.hpp"

namespace cascade {

void adamw_step(ParamSet& params, AdamWState& state, const AdamWConfig& config,
                const std::function<bool(const std::string&)>& trainable) {
  const std::size_t n = params.size();
  if (state.m.size() != n) {
    state.m.assign(n, Tensor());
    state.v.assign(n, Tensor());
    state.t.assign(n, 0);
  }
  std::size_t i = 0;
  for (const auto& [name, p] : params) {
    if (!trainable || trainable(name)) {
      for (double g : p.grad().data()) {
        if (!std::isfinite(g)) {
          throw DomainError("adamw_step: non-finite gradient in '" + name + "'");
        }
      }
    }
    if (!state.m[i].empty() && state.m[i].shape() != p.shape()) {
      throw DimensionError("adamw_step: moment shape " +
                           shape_str(state.m[i].shape()) + " does not match '" +
                           name + "' " + shape_str(p.shape()));
    }
    ++i;
  }

  i = 0;
  for (auto& [name, p] : params) {
    const std::size_t k = i++;
    if (trainable && !trainable(name)) continue;
    if (state.m[k].empty()) {
      state.m[k] = Tensor(p.shape(), 0.0);
      state.v[k] = Tensor(p.shape(), 0.0);
    }
    const std::size_t t = ++state.t[k];
    const double bc1 = 1.0 - std::pow(config.beta1, double(t));
    const double bc2 = 1.0 - std::pow(config.beta2, double(t));
    auto w = p.mutable_value().data();
    auto m = state.m[k].data();
    auto v = state.v[k].data();
    const Tensor& grad = p.grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double g = grad.empty() ? 0.0 : grad[j];
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g;
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g * g;
      w[j] -= config.lr * config.weight_decay * w[j];
      w[j] -= config.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config.eps);
    }
  }
}

TrainConfig TrainConfig::from(const KeyValueConfig& kv) {
  TrainConfig c;
  c.steps = kv.get_size("steps", c.steps);
  c.pre_steps = kv.get_size("pre_steps", c.pre_steps);
  c.flow_steps = kv.get_size("flow_steps", c.flow_steps);
  c.batch = kv.get_size("batch", c.batch);
  c.freeze_steps = kv.get_size("freeze_steps", c.freeze_steps);
  c.seed = kv.get_size("seed", c.seed);
  c.lr = kv.get_double("lr", c.lr);
  c.pre_lr = kv.get_double("pre_lr", c.lr);
  c.flow_lr = kv.get_double("flow_lr", c.lr);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.beta1 = kv.get_double("beta1", c.beta1);
  c.beta2 = kv.get_double("beta2", c.beta2);
  c.eps = kv.get_double("eps", c.eps);
  c.clip_norm = kv.get_double("clip_norm", c.clip_norm);
  c.gamma = kv.get_double("gamma", c.gamma);
  c.max_iters = kv.get_size("max_iters", c.max_iters);
  c.threshold = kv.get_double("threshold", c.threshold);
  c.exit_on_high = kv.get_bool("exit_on_high", c.exit_on_high);
  const std::string form = kv.get_string("loss_form", "printed");
  if (form == "printed") {
    c.loss_form = LossForm::Printed;
  } else if (form == "laplace") {
    c.loss_form = LossForm::Laplace;
  } else {
    throw ParameterError("loss_form must be 'printed' or 'laplace', got '" + form + "'");
  }
  c.model = ModelConfig::from(kv);
  c.data = DataSpec::from(kv);
  if (kv.has("flow_textures")) c.flow_textures = parse_textures(kv.get_string("flow_textures", ""));
  return c;
}

std::set<std::string> TrainConfig::keys() {
  std::set<std::string> k{"steps",   "pre_steps", "flow_steps",   "batch",
                          "freeze_steps", "seed", "lr",         "pre_lr",
                          "flow_lr", "weight_decay", "beta1",   "beta2",
                          "eps",     "clip_norm", "gamma",        "max_iters",
                          "threshold", "exit_on_high", "loss_form", "flow_textures"};
  k.insert(ModelConfig::keys().begin(), ModelConfig::keys().end());
  k.insert(DataSpec::keys().begin(), DataSpec::keys().end());
  return k;
}

void TrainConfig::validate() const {
  if (steps + pre_steps + flow_steps == 0) throw ParameterError("steps must be >= 1");
  if (batch == 0) throw ParameterError("batch must be >= 1");
  for (double r : {lr, pre_lr, flow_lr}) {
    if (!(r >= 0.0)) throw ParameterError("learning rates must be >= 0");
  }
  if (!(clip_norm > 0.0)) throw ParameterError("clip_norm must be > 0");
  if (data.channels != model.pre.channels) {
    throw ParameterError("data and model channel counts differ");
  }
  if (data.patch % model.flow.patch_unit() != 0) {
    throw ParameterError("data_patch " + std::to_string(data.patch) +
                         " must be divisible by " +
                         std::to_string(model.flow.patch_unit()));
  }
  if (data.frame_size() % (std::size_t{1} << model.pre.depth) != 0) {
    throw ParameterError("frame size " + std::to_string(data.frame_size()) +
                         " must be divisible by 2^model_pre_depth");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("gamma must be in (0, 1]");
  policy().validate();
}

ExitPolicy TrainConfig::policy() const {
  ExitPolicy p;
  p.enabled = true;
  p.threshold = threshold;
  p.max_iters = max_iters;
  p.exit_on_high = exit_on_high;
  return p;
}

AdamWConfig TrainConfig::adamw(double rate) const {
  return {rate, beta1, beta2, eps, weight_decay};
}

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "step,stage,loss";
  for (std::size_t k = 1; k <= max_iters; ++k) os << ",L" << k;
  os << ",grad_norm,mean_sigma2,exit_iteration\n";
  for (const auto& e : entries) {
    os << e.step << ',' << e.stage << ',' << fmt(e.loss);
    for (std::size_t k = 0; k < max_iters; ++k) {
      os << ',';
      if (k < e.per_iter.size()) os << fmt(e.per_iter[k]);
    }
    os << ',' << fmt(e.grad_norm) << ',' << fmt(e.mean_sigma2) << ','
       << e.exit_iteration << '\n';
  }
  return os.str();
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << to_csv();
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

PatchTriplet colocated_triplet(const std::array<Var, 3>& noisy,
                               const std::array<Var, 3>& pre, PixelPos origin,
                               std::size_t patch) {
  PatchTriplet t;
  t.ref_origin = origin;
  t.ref_noisy = crop(noisy[1], origin.y, origin.x, patch, patch);
  t.ref_pre = crop(pre[1], origin.y, origin.x, patch, patch);
  for (std::size_t s = 0; s < 2; ++s) {
    const std::size_t f = s == 0 ? 0 : 2;
    t.sup_origin[s] = origin;
    t.sup_noisy[s] = crop(noisy[f], origin.y, origin.x, patch, patch);
    t.sup_pre[s] = crop(pre[f], origin.y, origin.x, patch, patch);
  }
  return t;
}

std::array<Tensor, 2> colocated_flow_truth(const std::array<double, 2>& motion,
                                           std::size_t patch) {
  const std::size_t h = patch / FlowConfig::kDownsample;
  const double scale = 1.0 / double(FlowConfig::kDownsample);
  std::array<Tensor, 2> gt{Tensor({1, 2, h, h}), Tensor({1, 2, h, h})};
  for (std::size_t s = 0; s < 2; ++s) {
    const double sign = s == 0 ? -1.0 : 1.0;
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < h * h; ++i)
        gt[s][c * h * h + i] = sign * motion[c] * scale;
  }
  return gt;
}

namespace {

bool has_prefix(const std::string& name, const char* prefix) {
  return name.rfind(prefix, 0) == 0;
}

Var frame_var(const Tensor& f) {
  return Var(f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)}));
}

class Trainer {
 public:
  Trainer(const TrainConfig& config, Model& model)
      : cfg_(config), model_(model), rng_(config.seed) {
    log_.max_iters = config.max_iters;
    flow_data_ = config.data;
    flow_data_.textures = config.flow_textures;
  }

  TrainLog run() {
    for (std::size_t i = 0; i < cfg_.pre_steps; ++i) step("pre", i);
    for (std::size_t i = 0; i < cfg_.flow_steps; ++i) step("flow", i);
    for (std::size_t i = 0; i < cfg_.steps; ++i) step("joint", i);
    return std::move(log_);
  }

 private:
  bool trainable(const std::string& stage, std::size_t i, const std::string& name) const {
    if (stage == "pre") return has_prefix(name, "pre/");
    if (stage == "flow") return has_prefix(name, "flow/");
    if (i < cfg_.freeze_steps) return has_prefix(name, "recon/");
    return true;
  }

  void step(const std::string& stage, std::size_t i) {
    ParamSet& params = model_.params();
    for (auto& [name, p] : params) {
      p.set_requires_grad(trainable(stage, i, name));
      p.zero_grad();
    }
    TrainLogEntry entry;
    entry.step = log_.entries.size();
    entry.stage = stage;
    std::vector<double> per_iter;
    double total = 0.0;
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
      const Sample sample = make_sample(stage == "flow" ? flow_data_ : cfg_.data, rng_());
      Var loss = stage == "pre"    ? pre_loss(sample)
                 : stage == "flow" ? flow_loss(sample, per_iter, entry)
                                   : joint_loss(sample, per_iter, entry);
      if (!std::isfinite(loss.item())) {
        throw DomainError("training diverged at step " + std::to_string(entry.step) +
                          " (" + stage + " stage): non-finite loss");
      }
      total += loss.item();
      affine(loss, 1.0 / double(cfg_.batch)).backward();
    }
    entry.loss = total / double(cfg_.batch);
    for (double& v : per_iter) v /= double(cfg_.batch);
    entry.per_iter = std::move(per_iter);
    if (entry.stage == "joint") {
      entry.mean_sigma2 /= double(cfg_.batch);
    }

    double sq = 0.0;
    for (const auto& [name, p] : params)
      if (p.requires_grad())
        for (double g : p.grad().data()) sq += g * g;
    entry.grad_norm = std::sqrt(sq);
    if (!std::isfinite(entry.grad_norm)) {
      throw DomainError("training diverged at step " + std::to_string(entry.step) +
                        " (" + stage + " stage): non-finite gradient");
    }
    if (entry.grad_norm > cfg_.clip_norm) {
      const double f = cfg_.clip_norm / entry.grad_norm;
      for (auto& [name, p] : params)
        if (p.requires_grad())
          for (double& g : p.grad_buffer().data()) g *= f;
    }
    const double rate = stage == "pre" ? cfg_.pre_lr : stage == "flow" ? cfg_.flow_lr : cfg_.lr;
    adamw_step(params, adam_, cfg_.adamw(rate),
               [&](const std::string& name) { return trainable(stage, i, name); });
    for (auto& [name, p] : params) p.set_requires_grad(true);
    log_.entries.push_back(std::move(entry));
  }

  Var pre_loss(const Sample& s) {
    const Var out = model_.pre().forward(frame_var(s.noisy.frames[1]));
    return mse_loss(out, frame_var(s.clean.frames[1]));
  }

  std::array<Var, 3> pre_frames(const Sample& s) {
    std::array<Var, 3> pre;
    for (std::size_t f = 0; f < 3; ++f)
      pre[f] = model_.pre().forward(frame_var(s.noisy.frames[f]));
    return pre;
  }

  std::array<Var, 3> noisy_frames(const Sample& s) {
    return {frame_var(s.noisy.frames[0]), frame_var(s.noisy.frames[1]),
            frame_var(s.noisy.frames[2])};
  }

  Var flow_loss(const Sample& s, std::vector<double>& per_iter, TrainLogEntry&) {
    const std::size_t p = cfg_.data.patch, N = cfg_.max_iters;
    const PatchTriplet t =
        colocated_triplet(noisy_frames(s), pre_frames(s), cfg_.data.origin(), p);
    const auto flows = model_.flow().refine_flow(t, N);
    const auto gt = colocated_flow_truth(s.motion, p);
    std::vector<Var> losses;
    per_iter.resize(N, 0.0);
    for (std::size_t k = 0; k < N; ++k) {
      const Var l = affine(add(l1_loss(flows[0][k].flow, Var(gt[0])),
                               l1_loss(flows[1][k].flow, Var(gt[1]))),
                           0.5);
      per_iter[k] += l.item();
      losses.push_back(l);
    }
    return total_loss(losses, cfg_.gamma, N);
  }

  Var joint_loss(const Sample& s, std::vector<double>& per_iter, TrainLogEntry& entry) {
    const std::size_t N = cfg_.max_iters;
    const PatchTriplet t = triplet_at(noisy_frames(s), pre_frames(s), cfg_.data.origin(),
                                      cfg_.data.patch, cfg_.data.search_radius);
    ExitPolicy full = cfg_.policy();
    full.enabled = false;
    const auto outs = model_.process(t, full);
    const Var g(clean_patch(s, cfg_.data, cfg_.data.origin()));
    const ExitPolicy gate = cfg_.policy();
    std::vector<Var> losses;
    per_iter.resize(N, 0.0);
    std::size_t exit_at = 0;
    for (std::size_t k = 0; k < outs.size(); ++k) {
      const Var l = eu_loss(outs[k].s, g, outs[k].u, cfg_.loss_form);
      per_iter[k] += l.item();
      losses.push_back(l);
      if (exit_at == 0 && decide_exit(outs[k].u.value(), gate, k + 1).exit) exit_at = k + 1;
    }
    entry.mean_sigma2 += outs.back().decision.mean_uncertainty;
    entry.exit_iteration = std::max(entry.exit_iteration, exit_at);
    return total_loss(losses, cfg_.gamma, N);
  }

  const TrainConfig& cfg_;
  Model& model_;
  std::mt19937_64 rng_;
  DataSpec flow_data_;
  AdamWState adam_;
  TrainLog log_;
};

}  // namespace

TrainLog train(const TrainConfig& config, Model& model) {
  config.validate();
  return Trainer(config, model).run();
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  Model model(config.model, config.seed);
  TrainLog log = Trainer(config, model).run();
  return {std::move(model.params()), std::move(log)};
}

}  // namespace cascade
