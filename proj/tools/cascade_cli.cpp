// Command-line front end: train, denoise, eval, bench.

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "cascade/harness.hpp"
#include "cascade/trainer.hpp"

namespace fs = std::filesystem;
using namespace cascade;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

// CASCADE_SEED overrides the seed from the config file.
void apply_seed_override(KeyValueConfig& kv) {
  if (const char* s = std::getenv("CASCADE_SEED")) kv.set("seed", s);
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path q(p);
  return q.is_absolute() ? q : base / q;
}

fs::path manifest_of(const fs::path& p) {
  return fs::is_directory(p) ? p / "manifest.txt" : p;
}

std::set<std::string> bench_keys() {
  std::set<std::string> k = TrainConfig::keys();
  k.insert(SuiteSpec::keys().begin(), SuiteSpec::keys().end());
  k.insert({"params", "bench_patch", "bench_search_radius", "bench_tune_db"});
  return k;
}

int cmd_train(const fs::path& config, const fs::path& out) {
  KeyValueConfig kv = KeyValueConfig::load(config);
  kv.require_known(TrainConfig::keys());
  apply_seed_override(kv);
  const TrainConfig tc = TrainConfig::from(kv);
  TrainResult r = train(tc);
  fs::create_directories(out);
  r.params.save(out / "params.bin");
  r.log.write_csv(out / "train_log.csv");
  const auto& last = r.log.entries.back();
  std::cout << "trained " << r.log.entries.size() << " steps, final " << last.stage
            << " loss " << last.loss << "\n"
            << "wrote " << (out / "params.bin").string() << " and "
            << (out / "train_log.csv").string() << "\n";
  return 0;
}

struct DenoiseArgs {
  fs::path in, out, params;
  bool no_gate = false;
  double threshold = ExitPolicy{}.threshold;
  std::size_t max_iters = ExitPolicy{}.max_iters;
  bool exit_on_high = false;
  DenoiseOptions options;
};

int cmd_denoise(const DenoiseArgs& a) {
  const VideoSequence noisy = read_sequence(manifest_of(a.in));
  const Model model(ParamSet::load(a.params));
  ExitPolicy policy;
  policy.enabled = !a.no_gate;
  policy.threshold = a.threshold;
  policy.max_iters = a.max_iters;
  policy.exit_on_high = a.exit_on_high;
  const DenoiseResult r = denoise_video(noisy, model, policy, a.options);
  write_sequence(a.out, r.output);

  std::ostringstream pc;
  pc << "frame,x,y,iterations,mean_sigma2\n";
  for (const auto& p : r.patches) {
    pc << p.frame << ',' << p.origin.x << ',' << p.origin.y << ',' << p.iterations << ','
       << csv_number(p.mean_sigma2) << '\n';
  }
  write_text(a.out / "patches.csv", pc.str());
  std::ostringstream sc;
  sc << "frames,patches,mean_iterations,savings\n"
     << r.output.size() << ',' << r.patches.size() << ',' << csv_number(r.mean_iterations)
     << ',' << csv_number(r.savings) << '\n';
  write_text(a.out / "summary.csv", sc.str());
  std::cout << "denoised " << r.output.size() << " frames, mean iterations "
            << r.mean_iterations << ", savings " << r.savings << "\n";
  return 0;
}

int cmd_eval(const fs::path& pred_dir, const fs::path& gt_dir, const fs::path& report) {
  const VideoSequence pred = read_sequence(manifest_of(pred_dir));
  const VideoSequence gt = read_sequence(manifest_of(gt_dir));
  if (pred.size() != gt.size()) {
    throw ParameterError("eval: " + std::to_string(pred.size()) + " predicted frames vs " +
                         std::to_string(gt.size()) + " ground-truth frames");
  }
  std::ostringstream os;
  os << "frame,psnr,ssim\n";
  for (std::size_t t = 0; t < pred.size(); ++t) {
    os << t << ',' << csv_number(psnr(pred.frames[t], gt.frames[t])) << ','
       << csv_number(ssim(pred.frames[t], gt.frames[t])) << '\n';
  }
  const double p = sequence_psnr(pred, gt), s = sequence_ssim(pred, gt);
  os << "mean," << csv_number(p) << ',' << csv_number(s) << '\n';
  write_text(report, os.str());
  std::cout << "psnr " << p << " dB, ssim " << s << "\n";
  return 0;
}

int cmd_bench(const fs::path& config, const fs::path& report) {
  KeyValueConfig kv = KeyValueConfig::load(config);
  kv.require_known(bench_keys());
  apply_seed_override(kv);
  const TrainConfig tc = TrainConfig::from(kv);
  std::unique_ptr<Model> model;
  if (kv.has("params")) {
    model = std::make_unique<Model>(
        ParamSet::load(resolve(config.parent_path(), kv.get_string("params", ""))));
  } else {
    model = std::make_unique<Model>(tc.model, tc.seed);
    train(tc, *model);
  }
  DenoiseOptions options;
  options.patch = kv.get_size("bench_patch", tc.data.patch);
  options.search_radius = kv.get_size("bench_search_radius", tc.data.search_radius);
  SuiteSpec spec = SuiteSpec::from(kv);
  ExitPolicy policy = tc.policy();

  const double budget = kv.get_double("bench_tune_db", 0.0);
  if (budget > 0.0) {
    // Calibrate on a separate suite so the reported numbers are held out.
    SuiteSpec calib = spec;
    calib.seed = spec.seed + 1;
    const auto traces = trace_suite(make_suite(calib), *model, policy.max_iters, options);
    policy.threshold = tune_threshold(traces, policy.max_iters, budget);
    std::cout << "tuned threshold " << policy.threshold << "\n";
  }
  const fs::path heatmaps = report.parent_path() / (report.stem().string() + "_heatmaps");
  const EvalReport rep = bench(make_suite(spec), *model, policy, options, heatmaps);
  write_text(report, rep.rows_csv());
  write_text(report.parent_path() / (report.stem().string() + "_patches.csv"),
             rep.patches_csv());
  std::cout << "psnr on " << rep.psnr << " off " << rep.psnr_full << " dB, ssim on "
            << rep.ssim << " off " << rep.ssim_full << ", mean iterations "
            << rep.mean_iterations << "/" << policy.max_iters << ", savings " << rep.savings
            << ", pearson r " << rep.pearson_r << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cascaded uncertainty-gated burst video denoiser"};
  app.require_subcommand(1);

  fs::path train_config, train_out = ".";
  auto* tr = app.add_subcommand("train", "Train a model from a key=value config");
  tr->add_option("--config", train_config, "Config file")->required();
  tr->add_option("--out", train_out, "Output directory for params.bin and train_log.csv");

  DenoiseArgs da;
  auto* dn = app.add_subcommand("denoise", "Denoise a frame sequence");
  dn->add_option("--in", da.in, "Input manifest (or directory holding manifest.txt)")->required();
  dn->add_option("--out", da.out, "Output directory")->required();
  dn->add_option("--params", da.params, "Trained parameter file")->required();
  dn->add_flag("--no-gate", da.no_gate, "Always run max-iters iterations");
  dn->add_option("--threshold", da.threshold, "Exit threshold on mean sigma^2");
  dn->add_option("--max-iters", da.max_iters, "Iteration cap");
  dn->add_flag("--exit-on-high", da.exit_on_high, "Exit when mean sigma^2 exceeds the threshold");
  dn->add_option("--patch", da.options.patch, "Tile size");
  dn->add_option("--search-radius", da.options.search_radius, "Patch matching radius");

  fs::path pred, gt, eval_report;
  auto* ev = app.add_subcommand("eval", "PSNR/SSIM of predicted frames against ground truth");
  ev->add_option("--pred", pred, "Predicted frames (directory or manifest)")->required();
  ev->add_option("--gt", gt, "Ground-truth frames (directory or manifest)")->required();
  ev->add_option("--report", eval_report, "CSV report path")->required();

  fs::path bench_config, bench_report;
  auto* bn = app.add_subcommand("bench", "Gated vs full cascade on a synthetic suite");
  bn->add_option("--config", bench_config, "Config file")->required();
  bn->add_option("--report", bench_report, "CSV report path")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (tr->parsed()) return cmd_train(train_config, train_out);
    if (dn->parsed()) return cmd_denoise(da);
    if (ev->parsed()) return cmd_eval(pred, gt, eval_report);
    if (bn->parsed()) return cmd_bench(bench_config, bench_report);
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
