#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cascade/config.hpp"
#include "cascade/dataset.hpp"
#include "cascade/gate.hpp"
#include "cascade/image_io.hpp"
#include "cascade/model.hpp"

namespace cascade {

/// 10 log10(peak^2 / MSE); +inf when the inputs are identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

/// Mean SSIM over all 8x8 windows (stride 1) of the channel-mean images,
/// K1 = 0.01, K2 = 0.03, peak 1, population statistics. Accepts [C,H,W]
/// or [1,C,H,W].
double ssim(const Tensor& a, const Tensor& b);

/// Product-moment correlation. Zero variance throws DomainError.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

/// Min-max normalises `grid` [gh,gw] (constant grids map to 0.5),
/// nearest-neighbour upsamples to height x width and writes a 16-bit PGM.
/// Returns the written image [1,height,width].
Tensor emit_heatmap(const Tensor& grid, const std::filesystem::path& path,
                    std::size_t height, std::size_t width);

struct DenoiseOptions {
  std::size_t patch = 32;
  std::size_t search_radius = 8;
};

/// One reference tile of one frame.
struct PatchRecord {
  std::size_t frame = 0;
  PixelPos origin;
  std::size_t iterations = 0;
  double mean_sigma2 = 0.0;
};

struct DenoiseResult {
  VideoSequence output;
  std::vector<PatchRecord> patches;
  double mean_iterations = 0.0;
  double savings = 0.0;
};

/// Pre-denoises every frame, tiles each frame with non-overlapping patches
/// (a last tile aligned to the far edge covers any remainder; every pixel is
/// written once), matches against the neighbours and runs the gated cascade.
/// The first and last frames reuse themselves as the missing neighbour.
DenoiseResult denoise_video(const VideoSequence& noisy, const Model& model,
                            const ExitPolicy& policy,
                            const DenoiseOptions& options);

/// Per-patch trace of a full (ungated) cascade against the clean patch.
struct PatchTrace {
  std::size_t sequence = 0;
  std::size_t frame = 0;
  double sigma = 0.0;
  std::vector<double> mean_sigma2;  // per iteration
  std::vector<double> sse;          // squared error per iteration
  std::size_t pixels = 0;
};

/// Outcome of replaying a gate over traces.
struct GateSimulation {
  double psnr = 0.0;  // mean over sequences of mean frame PSNR
  double mean_iterations = 0.0;
  std::vector<std::size_t> exit_iteration;  // per trace
};

GateSimulation simulate_gate(const std::vector<PatchTrace>& traces,
                             const ExitPolicy& policy);

/// Largest threshold (among the traced mean sigma^2 values) whose replayed
/// PSNR stays within `max_drop_db` of the ungated PSNR. Returns 0 when none
/// qualifies.
double tune_threshold(const std::vector<PatchTrace>& traces,
                      std::size_t max_iters, double max_drop_db);

/// Mixed-noise synthetic suite.
struct SuiteSpec {
  std::vector<double> sigmas{0.02, 0.05, 0.1};
  std::size_t sequences_per_sigma = 4;
  std::size_t frames = 3;
  std::size_t size = 48;
  std::size_t channels = 1;
  double max_motion = 2.0;
  std::vector<Texture> textures{Texture::Gradient, Texture::Checker, Texture::Perlin};
  std::uint64_t seed = 1000;

  static SuiteSpec from(const KeyValueConfig& kv);
  static const std::set<std::string>& keys();
};

struct SuiteSequence {
  double sigma = 0.0;
  VideoSequence clean;
  VideoSequence noisy;
};

std::vector<SuiteSequence> make_suite(const SuiteSpec& spec);

/// Ungated traces of every tile of every frame in the suite.
std::vector<PatchTrace> trace_suite(const std::vector<SuiteSequence>& suite,
                                    const Model& model, std::size_t max_iters,
                                    const DenoiseOptions& options);

struct EvalRow {
  std::size_t sequence = 0;
  double sigma = 0.0;
  bool gating = false;
  double psnr = 0.0;
  double ssim = 0.0;
  double mean_iterations = 0.0;
  double savings = 0.0;
};

struct PatchEval {
  std::size_t sequence = 0;
  std::size_t frame = 0;
  double sigma = 0.0;
  PixelPos origin;
  std::size_t exit_iteration = 0;  // gated run
  double mean_abs_error = 0.0;     // ungated run, final iteration
  double mean_sigma2 = 0.0;        // ungated run, final iteration
};

struct EvalReport {
  double psnr = 0.0;          // gating on
  double psnr_full = 0.0;     // gating off
  double ssim = 0.0;
  double ssim_full = 0.0;
  double pearson_r = 0.0;
  double mean_iterations = 0.0;
  double savings = 0.0;
  std::vector<EvalRow> rows;
  std::vector<PatchEval> patches;

  /// sequence,sigma,gating,psnr,ssim,mean_iterations,savings plus an "all"
  /// summary row per gating mode.
  std::string rows_csv() const;
  /// sequence,frame,sigma,x,y,exit_iteration,mean_abs_error,mean_sigma2
  std::string patches_csv() const;
};

/// Denoises every suite sequence with gating on and off and evaluates the
/// result. Heat maps of per-patch |error| and sigma^2 for the middle frame of
/// each sequence are written to `heatmap_dir` when it is non-empty.
EvalReport bench(const std::vector<SuiteSequence>& suite, const Model& model,
                 const ExitPolicy& policy, const DenoiseOptions& options,
                 const std::filesystem::path& heatmap_dir = {});

/// Mean over frames of PSNR (+inf frames included as +inf).
double sequence_psnr(const VideoSequence& a, const VideoSequence& b);
double sequence_ssim(const VideoSequence& a, const VideoSequence& b);

/// Writes a real or "inf"/"-inf"/"nan" for CSV.
std::string csv_number(double v);

}  // namespace cascade
