#include "cascade/harness.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "cascade/ops.hpp"

namespace cascade {

std::string csv_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

double psnr(const Tensor& a, const Tensor& b, double peak) {
  if (a.shape() != b.shape()) {
    throw DimensionError("psnr: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  if (!(peak > 0.0)) throw ParameterError("psnr: peak must be > 0");
  if (a.numel() == 0) throw DimensionError("psnr: empty input");
  double sse = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) sse += (a[i] - b[i]) * (a[i] - b[i]);
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / (sse / static_cast<double>(a.numel())));
}

namespace {

Tensor as_chw(const Tensor& t, const char* op) {
  if (t.rank() == 3) return t;
  if (t.rank() == 4 && t.dim(0) == 1) return t.reshaped({t.dim(1), t.dim(2), t.dim(3)});
  throw DimensionError(std::string(op) + ": expected [C,H,W] or [1,C,H,W], got " +
                       shape_str(t.shape()));
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("ssim: shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " differ");
  }
  const Tensor ga = gray_projection(as_chw(a, "ssim"));
  const Tensor gb = gray_projection(as_chw(b, "ssim"));
  constexpr std::size_t win = 8;
  const std::size_t H = ga.dim(1), W = ga.dim(2);
  if (H < win || W < win) {
    throw DimensionError("ssim: image " + std::to_string(W) + "x" +
                         std::to_string(H) + " smaller than the 8x8 window");
  }
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  const double n = win * win;
  double total = 0.0;
  for (std::size_t y = 0; y + win <= H; ++y) {
    for (std::size_t x = 0; x + win <= W; ++x) {
      double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
      for (std::size_t i = 0; i < win; ++i)
        for (std::size_t j = 0; j < win; ++j) {
          const double va = ga[(y + i) * W + x + j], vb = gb[(y + i) * W + x + j];
          sa += va;
          sb += vb;
          saa += va * va;
          sbb += vb * vb;
          sab += va * vb;
        }
      const double ma = sa / n, mb = sb / n;
      const double va = saa / n - ma * ma, vb = sbb / n - mb * mb;
      const double cov = sab / n - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  }
  return total / static_cast<double>((H - win + 1) * (W - win + 1));
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw DimensionError("pearson: need two equal-length lists of >= 2 values, got " +
                         std::to_string(x.size()) + " and " + std::to_string(y.size()));
  }
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) {
    throw DomainError("pearson: correlation undefined for zero-variance input");
  }
  return sxy / std::sqrt(sxx * syy);
}

Tensor emit_heatmap(const Tensor& grid, const std::filesystem::path& path,
                    std::size_t height, std::size_t width) {
  if (grid.rank() != 2 || grid.numel() == 0) {
    throw DimensionError("emit_heatmap: expected a non-empty [rows,cols] grid, got " +
                         shape_str(grid.shape()));
  }
  if (height == 0 || width == 0) throw ParameterError("emit_heatmap: empty frame size");
  const std::size_t gh = grid.dim(0), gw = grid.dim(1);
  const auto [lo, hi] = std::minmax_element(grid.data().begin(), grid.data().end());
  const double a = *lo, span = *hi - *lo;
  Tensor img({1, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::size_t gy = y * gh / height, gx = x * gw / width;
      img[y * width + x] = span > 0 ? (grid[gy * gw + gx] - a) / span : 0.5;
    }
  write_frame(path, img);
  return img;
}

namespace {

// Pads with edge replication to a multiple of `unit`, pre-denoises, crops.
Tensor predenoise_frame(const PreDenoiser& pre, const Tensor& frame) {
  const std::size_t unit = std::size_t{1} << pre.config().depth;
  const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  const std::size_t Hp = (H + unit - 1) / unit * unit, Wp = (W + unit - 1) / unit * unit;
  if (Hp == H && Wp == W) return pre.predenoise(frame);
  Tensor padded({C, Hp, Wp});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < Hp; ++y)
      for (std::size_t x = 0; x < Wp; ++x)
        padded[(c * Hp + y) * Wp + x] =
            frame[(c * H + std::min(y, H - 1)) * W + std::min(x, W - 1)];
  const Tensor out = pre.predenoise(padded);
  Tensor cropped({C, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        cropped[(c * H + y) * W + x] = out[(c * Hp + y) * Wp + x];
  return cropped;
}

Var frame_var(const Tensor& f) {
  return Var(f.reshaped({1, f.dim(0), f.dim(1), f.dim(2)}));
}

using TileFn = std::function<void(std::size_t frame, PixelPos origin,
                                  const std::vector<IterationOutput>& outs)>;

// Runs the cascade on every tile of every frame.
void for_each_tile(const VideoSequence& noisy, const Model& model,
                   const ExitPolicy& policy, const DenoiseOptions& options,
                   const TileFn& fn) {
  policy.validate();
  if (noisy.size() < 3) {
    throw ParameterError("denoise_video: need at least 3 frames, got " +
                         std::to_string(noisy.size()));
  }
  const std::size_t p = options.patch;
  const std::size_t unit = model.config().flow.patch_unit();
  if (p == 0 || p % unit != 0) {
    throw ParameterError("patch size " + std::to_string(p) +
                         " must be a positive multiple of " + std::to_string(unit));
  }
  NoGradGuard guard;
  const std::size_t T = noisy.size();
  std::vector<Var> nv(T), pv(T);
  for (std::size_t t = 0; t < T; ++t) {
    nv[t] = frame_var(noisy.frames[t]);
    pv[t] = frame_var(predenoise_frame(model.pre(), noisy.frames[t]));
  }
  const auto ys = tile_origins(noisy.height(), p, p, true);
  const auto xs = tile_origins(noisy.width(), p, p, true);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t prev = t == 0 ? 0 : t - 1;
    const std::size_t next = t + 1 == T ? t : t + 1;
    const std::array<Var, 3> n3{nv[prev], nv[t], nv[next]};
    const std::array<Var, 3> p3{pv[prev], pv[t], pv[next]};
    for (std::size_t y : ys)
      for (std::size_t x : xs) {
        const PatchTriplet trip = triplet_at(n3, p3, {x, y}, p, options.search_radius);
        fn(t, {x, y}, model.process(trip, policy));
      }
  }
}

Tensor clamp01(const Tensor& t) {
  Tensor out = t;
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace

DenoiseResult denoise_video(const VideoSequence& noisy, const Model& model,
                            const ExitPolicy& policy,
                            const DenoiseOptions& options) {
  DenoiseResult res;
  res.output.frame_rate = noisy.frame_rate;
  for (const Tensor& f : noisy.frames) res.output.frames.emplace_back(f.shape(), 0.0);
  std::vector<std::vector<char>> covered(noisy.size());
  for (auto& c : covered) c.assign(noisy.height() * noisy.width(), 0);
  std::vector<GateDecision> finals;
  const std::size_t p = options.patch;

  for_each_tile(noisy, model, policy, options,
                [&](std::size_t t, PixelPos o, const std::vector<IterationOutput>& outs) {
                  const Tensor s = clamp01(outs.back().s.value());
                  Tensor& dst = res.output.frames[t];
                  const std::size_t C = dst.dim(0), H = dst.dim(1), W = dst.dim(2);
                  for (std::size_t y = 0; y < p; ++y)
                    for (std::size_t x = 0; x < p; ++x) {
                      char& done = covered[t][(o.y + y) * W + o.x + x];
                      if (done) continue;
                      done = 1;
                      for (std::size_t c = 0; c < C; ++c)
                        dst[(c * H + o.y + y) * W + o.x + x] = s[(c * p + y) * p + x];
                    }
                  const GateDecision& d = outs.back().decision;
                  res.patches.push_back({t, o, d.iteration, d.mean_uncertainty});
                  finals.push_back(d);
                });

  double iters = 0.0;
  for (const auto& r : res.patches) iters += static_cast<double>(r.iterations);
  res.mean_iterations = iters / static_cast<double>(res.patches.size());
  res.savings = compute_savings(finals, policy.max_iters);
  return res;
}

GateSimulation simulate_gate(const std::vector<PatchTrace>& traces,
                             const ExitPolicy& policy) {
  policy.validate();
  if (traces.empty()) throw ParameterError("simulate_gate: no traces");
  GateSimulation sim;
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> frames;
  double iters = 0.0;
  for (const auto& tr : traces) {
    const std::size_t n = std::min(policy.max_iters, tr.sse.size());
    if (n == 0) throw ParameterError("simulate_gate: empty trace");
    std::size_t k = 1;
    while (k < n && !exit_condition(tr.mean_sigma2[k - 1], policy, k)) ++k;
    sim.exit_iteration.push_back(k);
    iters += static_cast<double>(k);
    auto& acc = frames[{tr.sequence, tr.frame}];
    acc.first += tr.sse[k - 1];
    acc.second += static_cast<double>(tr.pixels);
  }
  std::map<std::size_t, std::pair<double, std::size_t>> seqs;
  for (const auto& [key, acc] : frames) {
    const double mse = acc.first / acc.second;
    const double db = mse == 0.0 ? std::numeric_limits<double>::infinity()
                                 : -10.0 * std::log10(mse);
    seqs[key.first].first += db;
    seqs[key.first].second += 1;
  }
  for (const auto& [seq, acc] : seqs) sim.psnr += acc.first / double(acc.second);
  sim.psnr /= static_cast<double>(seqs.size());
  sim.mean_iterations = iters / static_cast<double>(traces.size());
  return sim;
}

double tune_threshold(const std::vector<PatchTrace>& traces,
                      std::size_t max_iters, double max_drop_db) {
  ExitPolicy full;
  full.enabled = false;
  full.max_iters = max_iters;
  const double base = simulate_gate(traces, full).psnr;
  std::vector<double> candidates;
  for (const auto& tr : traces)
    for (double m : tr.mean_sigma2)
      candidates.push_back(std::nextafter(m, std::numeric_limits<double>::infinity()));
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
  ExitPolicy gate;
  gate.max_iters = max_iters;
  for (auto it = candidates.rbegin(); it != candidates.rend(); ++it) {
    gate.threshold = *it;
    if (base - simulate_gate(traces, gate).psnr < max_drop_db) return *it;
  }
  return 0.0;
}

SuiteSpec SuiteSpec::from(const KeyValueConfig& kv) {
  SuiteSpec s;
  s.sigmas = kv.get_doubles("bench_sigmas", s.sigmas);
  s.sequences_per_sigma = kv.get_size("bench_sequences", s.sequences_per_sigma);
  s.frames = kv.get_size("bench_frames", s.frames);
  s.size = kv.get_size("bench_size", s.size);
  s.channels = kv.get_size("model_channels", s.channels);
  s.max_motion = kv.get_double("bench_max_motion", s.max_motion);
  if (kv.has("bench_textures")) s.textures = parse_textures(kv.get_string("bench_textures", ""));
  s.seed = kv.get_size("bench_seed", s.seed);
  return s;
}

const std::set<std::string>& SuiteSpec::keys() {
  static const std::set<std::string> k{"bench_sigmas", "bench_sequences", "bench_frames",
                                       "bench_size",   "bench_max_motion", "bench_textures",
                                       "bench_seed"};
  return k;
}

std::vector<SuiteSequence> make_suite(const SuiteSpec& spec) {
  if (spec.sigmas.empty() || spec.textures.empty() || spec.sequences_per_sigma == 0) {
    throw ParameterError("make_suite: empty suite");
  }
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uni(-spec.max_motion, spec.max_motion);
  std::vector<SuiteSequence> out;
  for (double sigma : spec.sigmas)
    for (std::size_t i = 0; i < spec.sequences_per_sigma; ++i) {
      SynthSpec s;
      s.seed = rng();
      s.n_frames = spec.frames;
      s.height = s.width = spec.size;
      s.channels = spec.channels;
      s.motion = {uni(rng), uni(rng)};
      s.texture = spec.textures[rng() % spec.textures.size()];
      SuiteSequence seq;
      seq.sigma = sigma;
      seq.clean = synth_sequence(s);
      seq.noisy = add_noise(seq.clean, GaussianNoise{sigma}, rng());
      out.push_back(std::move(seq));
    }
  return out;
}

namespace {

Tensor patch_of(const Tensor& frame, PixelPos o, std::size_t p) {
  const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  Tensor out({1, C, p, p});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < p; ++y)
      for (std::size_t x = 0; x < p; ++x)
        out[(c * p + y) * p + x] = frame[(c * H + o.y + y) * W + o.x + x];
  return out;
}

}  // namespace

std::vector<PatchTrace> trace_suite(const std::vector<SuiteSequence>& suite,
                                    const Model& model, std::size_t max_iters,
                                    const DenoiseOptions& options) {
  ExitPolicy full;
  full.enabled = false;
  full.max_iters = max_iters;
  std::vector<PatchTrace> traces;
  for (std::size_t i = 0; i < suite.size(); ++i) {
    const auto& seq = suite[i];
    for_each_tile(seq.noisy, model, full, options,
                  [&](std::size_t t, PixelPos o, const std::vector<IterationOutput>& outs) {
                    const Tensor g = patch_of(seq.clean.frames[t], o, options.patch);
                    PatchTrace tr;
                    tr.sequence = i;
                    tr.frame = t;
                    tr.sigma = seq.sigma;
                    tr.pixels = g.numel();
                    for (const auto& it : outs) {
                      const Tensor s = clamp01(it.s.value());
                      double sse = 0.0;
                      for (std::size_t j = 0; j < g.numel(); ++j)
                        sse += (s[j] - g[j]) * (s[j] - g[j]);
                      tr.sse.push_back(sse);
                      tr.mean_sigma2.push_back(it.decision.mean_uncertainty);
                    }
                    traces.push_back(std::move(tr));
                  });
  }
  return traces;
}

double sequence_psnr(const VideoSequence& a, const VideoSequence& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw DimensionError("sequence_psnr: frame counts differ or are zero");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) sum += psnr(a.frames[t], b.frames[t]);
  return sum / static_cast<double>(a.size());
}

double sequence_ssim(const VideoSequence& a, const VideoSequence& b) {
  if (a.size() != b.size() || a.size() == 0) {
    throw DimensionError("sequence_ssim: frame counts differ or are zero");
  }
  double sum = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) sum += ssim(a.frames[t], b.frames[t]);
  return sum / static_cast<double>(a.size());
}

EvalReport bench(const std::vector<SuiteSequence>& suite, const Model& model,
                 const ExitPolicy& policy, const DenoiseOptions& options,
                 const std::filesystem::path& heatmap_dir) {
  if (suite.empty()) throw ParameterError("bench: empty suite");
  ExitPolicy full = policy;
  full.enabled = false;
  EvalReport rep;
  std::vector<GateDecision> finals;
  double iters = 0.0;
  std::vector<double> errs, sig;
  if (!heatmap_dir.empty()) std::filesystem::create_directories(heatmap_dir);

  for (std::size_t i = 0; i < suite.size(); ++i) {
    const auto& seq = suite[i];
    const DenoiseResult on = denoise_video(seq.noisy, model, policy, options);
    const DenoiseResult off = denoise_video(seq.noisy, model, full, options);
    for (const auto* r : {&on, &off}) {
      EvalRow row;
      row.sequence = i;
      row.sigma = seq.sigma;
      row.gating = r == &on;
      row.psnr = sequence_psnr(r->output, seq.clean);
      row.ssim = sequence_ssim(r->output, seq.clean);
      row.mean_iterations = r->mean_iterations;
      row.savings = r->savings;
      rep.rows.push_back(row);
    }
    const std::size_t mid = seq.noisy.size() / 2;
    const auto ys = tile_origins(seq.noisy.height(), options.patch, options.patch, true);
    const auto xs = tile_origins(seq.noisy.width(), options.patch, options.patch, true);
    Tensor err_grid({ys.size(), xs.size()}), sig_grid({ys.size(), xs.size()});
    for (std::size_t j = 0; j < off.patches.size(); ++j) {
      const PatchRecord& full_rec = off.patches[j];
      const PatchRecord& gated = on.patches[j];
      const Tensor s = patch_of(off.output.frames[full_rec.frame], full_rec.origin, options.patch);
      const Tensor g = patch_of(seq.clean.frames[full_rec.frame], full_rec.origin, options.patch);
      double e = 0.0;
      for (std::size_t q = 0; q < g.numel(); ++q) e += std::abs(s[q] - g[q]);
      e /= static_cast<double>(g.numel());
      rep.patches.push_back({i, full_rec.frame, seq.sigma, full_rec.origin,
                             gated.iterations, e, full_rec.mean_sigma2});
      errs.push_back(e);
      sig.push_back(full_rec.mean_sigma2);
      finals.push_back({gated.mean_sigma2, true, gated.iterations});
      iters += static_cast<double>(gated.iterations);
      if (full_rec.frame == mid) {
        const std::size_t gy = std::find(ys.begin(), ys.end(), full_rec.origin.y) - ys.begin();
        const std::size_t gx = std::find(xs.begin(), xs.end(), full_rec.origin.x) - xs.begin();
        err_grid[gy * xs.size() + gx] = e;
        sig_grid[gy * xs.size() + gx] = full_rec.mean_sigma2;
      }
    }
    if (!heatmap_dir.empty()) {
      const std::string tag = "seq" + std::to_string(i);
      emit_heatmap(err_grid, heatmap_dir / (tag + "_error.pgm"), seq.noisy.height(),
                   seq.noisy.width());
      emit_heatmap(sig_grid, heatmap_dir / (tag + "_uncertainty.pgm"), seq.noisy.height(),
                   seq.noisy.width());
    }
  }
  double n_on = 0, n_off = 0;
  for (const auto& r : rep.rows) {
    if (r.gating) {
      rep.psnr += r.psnr;
      rep.ssim += r.ssim;
      n_on += 1;
    } else {
      rep.psnr_full += r.psnr;
      rep.ssim_full += r.ssim;
      n_off += 1;
    }
  }
  rep.psnr /= n_on;
  rep.ssim /= n_on;
  rep.psnr_full /= n_off;
  rep.ssim_full /= n_off;
  rep.mean_iterations = iters / static_cast<double>(finals.size());
  rep.savings = compute_savings(finals, policy.max_iters);
  rep.pearson_r = pearson(errs, sig);
  return rep;
}

std::string EvalReport::rows_csv() const {
  std::ostringstream os;
  os << "sequence,sigma,gating,psnr,ssim,mean_iterations,savings\n";
  for (const auto& r : rows) {
    os << r.sequence << ',' << csv_number(r.sigma) << ',' << (r.gating ? "on" : "off")
       << ',' << csv_number(r.psnr) << ',' << csv_number(r.ssim) << ','
       << csv_number(r.mean_iterations) << ',' << csv_number(r.savings) << '\n';
  }
  os << "all,,on," << csv_number(psnr) << ',' << csv_number(ssim) << ','
     << csv_number(mean_iterations) << ',' << csv_number(savings) << '\n';
  double full_iters = 0.0, n_full = 0.0;
  for (const auto& r : rows) {
    if (!r.gating) {
      full_iters += r.mean_iterations;
      n_full += 1;
    }
  }
  os << "all,,off," << csv_number(psnr_full) << ',' << csv_number(ssim_full) << ','
     << csv_number(n_full > 0 ? full_iters / n_full : 0.0) << ",0\n";
  os << "pearson_r," << csv_number(pearson_r) << ",,,,,\n";
  return os.str();
}

std::string EvalReport::patches_csv() const {
  std::ostringstream os;
  os << "sequence,frame,sigma,x,y,exit_iteration,mean_abs_error,mean_sigma2\n";
  for (const auto& p : patches) {
    os << p.sequence << ',' << p.frame << ',' << csv_number(p.sigma) << ','
       << p.origin.x << ',' << p.origin.y << ',' << p.exit_iteration << ','
       << csv_number(p.mean_abs_error) << ',' << csv_number(p.mean_sigma2) << '\n';
  }
  return os.str();
}

}  // namespace cascade
