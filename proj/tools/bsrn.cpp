#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "bsrn/checkpoint.hpp"
#include "bsrn/data.hpp"
#include "bsrn/gradcheck.hpp"
#include "bsrn/metrics.hpp"
#include "bsrn/model.hpp"
#include "bsrn/trainer.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

// Median wall-clock of `runs` executions (one untimed warm-up first when
// more than one run is requested).
template <typename Fn>
double timed_median_ms(int runs, Fn&& fn) {
  if (runs < 1) runs = 1;
  if (runs > 1) fn();
  std::vector<double> samples;
  samples.reserve(runs);
  for (int i = 0; i < runs; ++i) {
    const auto start = Clock::now();
    fn();
    samples.push_back(ms_since(start));
  }
  std::sort(samples.begin(), samples.end());
  return samples[samples.size() / 2];
}

std::vector<int> parse_scales(const std::string& csv) {
  std::vector<int> scales;
  std::string token;
  for (char ch : csv + ",") {
    if (ch == ',') {
      if (!token.empty()) scales.push_back(std::stoi(token));
      token.clear();
    } else {
      token.push_back(ch);
    }
  }
  return scales;
}

bsrn::FeatureMap clamp01(bsrn::FeatureMap map) {
  map.array() = map.array().min(1.0f).max(0.0f);
  return map;
}

int cmd_params(const std::string& scales_csv, int c, int s) {
  bsrn::ModelConfig config;
  config.channels = c;
  config.state_channels = s;
  config.scales = parse_scales(scales_csv);
  config.validate();
  for (int scale : config.scales) {
    std::printf("scale x%d: body %lld head %lld total %lld\n", scale,
                static_cast<long long>(bsrn::body_param_count(config)),
                static_cast<long long>(bsrn::head_param_count(config, scale)),
                static_cast<long long>(bsrn::count_params(config, scale)));
  }
  return 0;
}

int cmd_gradcheck(const bsrn::GradCheckOptions& options) {
  const bsrn::GradCheckReport report = bsrn::run_gradcheck(options);
  for (const auto& row : report.primitives)
    std::printf("primitive %-24s rel_err %.3e %s\n", row.name.c_str(), row.rel_error,
                row.pass ? "PASS" : "FAIL");
  for (const auto& row : report.groups)
    std::printf("group %-28s rel_err %.3e %s\n", row.name.c_str(), row.rel_error,
                row.pass ? "PASS" : "FAIL");
  std::printf("gradcheck %s (tolerance %.0e)\n", report.pass ? "PASS" : "FAIL", report.tolerance);
  return report.pass ? 0 : 1;
}

struct TrainArgs {
  bsrn::TrainRun run;
  int scale = 0;
  bool multi_scale = false;
  bool patch_given = false;
};

int cmd_train(TrainArgs& args) {
  if (args.multi_scale == (args.scale != 0))
    throw bsrn::ConfigError("pass exactly one of --scale or --multi-scale");
  args.run.model.scales = args.multi_scale ? std::vector<int>{2, 3, 4} : std::vector<int>{args.scale};
  if (!args.patch_given) {
    if (args.multi_scale)
      args.run.train.patch = 48;
    else
      args.run.train.patch = args.scale == 3 ? 33 : 32;
  }
  if (args.run.log_path.empty()) args.run.log_path = args.run.checkpoint_path + ".log.csv";
  args.run.model.validate();

  const bsrn::Checkpoint final = bsrn::run_training(args.run);
  std::printf("trained to step %llu, checkpoint %s, log %s\n",
              static_cast<unsigned long long>(final.step), args.run.checkpoint_path.c_str(),
              args.run.log_path.c_str());
  return 0;
}

struct UpscaleArgs {
  std::string checkpoint;
  std::string input;
  std::string output;
  std::string emit_dir;
  int scale = 0;
  int freq_control = 0;
  int time_runs = 1;
};

int cmd_upscale(const UpscaleArgs& args) {
  const bsrn::Checkpoint ckpt = bsrn::load_checkpoint(args.checkpoint);
  int scale = args.scale;
  if (scale == 0) {
    if (ckpt.config.scales.size() != 1)
      throw bsrn::ConfigError("checkpoint trains several scales; pass --scale");
    scale = ckpt.config.scales.front();
  }
  const bsrn::FeatureMap input = bsrn::to_feature_map(bsrn::load_ppm(args.input));

  bsrn::ForwardResult result;
  const double elapsed = timed_median_ms(args.time_runs, [&] {
    result = bsrn::forward(input, ckpt.params, ckpt.config, scale, args.freq_control,
                           !args.emit_dir.empty());
  });

  bsrn::save_ppm(bsrn::to_image(result.output), args.output);
  if (!args.emit_dir.empty()) {
    std::filesystem::create_directories(args.emit_dir);
    for (std::size_t i = 0; i < result.intermediates.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof(name), "intermediate_%02zu.ppm", i + 1);
      bsrn::save_ppm(bsrn::to_image(clamp01(result.intermediates[i])),
                     (std::filesystem::path(args.emit_dir) / name).string());
    }
  }
  const int r = args.freq_control == 0 ? ckpt.config.freq_control : args.freq_control;
  std::printf("scale=%d recursions=%d freq_control=%d head_evals=%d time_ms=%.3f out=%s\n", scale,
              ckpt.config.recursions, r, result.head_evals, elapsed, args.output.c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data_dir;
  std::string out_csv;
  int scale = 0;
  int shave = -1;
  int time_runs = 5;
  int freq_control = 0;
};

int cmd_eval(const EvalArgs& args) {
  if (args.scale < 1 || args.scale > 4)
    throw bsrn::ConfigError("eval supports scales 1..4 (1 is the identity debug path)");
  const bool identity = args.scale == 1;
  bsrn::Checkpoint ckpt;
  if (!identity) {
    if (args.checkpoint.empty()) throw bsrn::ConfigError("--checkpoint is required for scale > 1");
    ckpt = bsrn::load_checkpoint(args.checkpoint);
    if (!ckpt.config.has_scale(args.scale))
      throw bsrn::ConfigError("checkpoint has no head for scale x" + std::to_string(args.scale));
  }
  const int shave = args.shave >= 0 ? args.shave : args.scale;

  const bsrn::Dataset dataset(args.data_dir, {args.scale});

  std::FILE* out = stdout;
  if (!args.out_csv.empty()) {
    out = std::fopen(args.out_csv.c_str(), "w");
    if (!out) throw std::runtime_error(args.out_csv + ": cannot open for writing");
  }

  std::fprintf(out, "image,psnr,ssim,psnr_bicubic,ssim_bicubic,time_ms\n");
  double sum_psnr = 0, sum_ssim = 0, sum_psnr_b = 0, sum_ssim_b = 0, sum_time = 0;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const bsrn::ScaledImage& img = dataset.at(i, args.scale);

    bsrn::FeatureMap prediction;
    const double elapsed = timed_median_ms(args.time_runs, [&] {
      if (identity)
        prediction = img.lr;
      else
        prediction =
            bsrn::forward(img.lr, ckpt.params, ckpt.config, args.scale, args.freq_control).output;
    });

    const Eigen::ArrayXXd gt = bsrn::rgb_to_y(img.hr);
    const Eigen::ArrayXXd pred_y = bsrn::rgb_to_y(clamp01(prediction));
    const bsrn::FeatureMap baseline =
        clamp01(bsrn::bicubic_resize(img.lr, img.hr.height(), img.hr.width()));
    const Eigen::ArrayXXd base_y = bsrn::rgb_to_y(baseline);

    const double p = bsrn::psnr(pred_y, gt, shave);
    const double s = bsrn::ssim(pred_y, gt, shave);
    const double pb = bsrn::psnr(base_y, gt, shave);
    const double sb = bsrn::ssim(base_y, gt, shave);
    sum_psnr += p;
    sum_ssim += s;
    sum_psnr_b += pb;
    sum_ssim_b += sb;
    sum_time += elapsed;
    std::fprintf(out, "%s,%.17g,%.17g,%.17g,%.17g,%.3f\n", img.name.c_str(), p, s, pb, sb,
                 elapsed);
  }
  const double n = static_cast<double>(dataset.size());
  std::fprintf(out, "mean,%.17g,%.17g,%.17g,%.17g,%.3f\n", sum_psnr / n, sum_ssim / n,
               sum_psnr_b / n, sum_ssim_b / n, sum_time / n);
  if (out != stdout) std::fclose(out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Block state-based recursive super-resolution"};
  app.require_subcommand(1);

  // ---- params ----
  auto* params_cmd = app.add_subcommand("params", "Print parameter counts per scale");
  std::string params_scales = "2,3,4";
  int params_c = 64, params_s = 64;
  params_cmd->add_option("--c", params_c, "Feature channels");
  params_cmd->add_option("--s", params_s, "Block-state channels");
  params_cmd->add_option("--scales", params_scales, "Comma-separated scales");

  // ---- gradcheck ----
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  bsrn::GradCheckOptions grad_options;
  grad_cmd->add_option("--c", grad_options.config.channels, "Feature channels");
  grad_cmd->add_option("--s", grad_options.config.state_channels, "Block-state channels");
  grad_cmd->add_option("--recursions", grad_options.config.recursions, "Recursion count");
  grad_cmd->add_option("--freq-control", grad_options.config.freq_control, "Head period");
  grad_cmd->add_option("--scale", grad_options.scale, "Upscaling factor");
  grad_cmd->add_option("--size", grad_options.input_size, "Test input side length");
  grad_cmd->add_option("--seed", grad_options.seed, "RNG seed");
  grad_cmd->add_option("--tolerance", grad_options.tolerance, "Relative error bound");
  grad_cmd->add_flag("--corrupt", grad_options.corrupt,
                     "Mis-scale one analytic gradient group (must fail)");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  TrainArgs train_args;
  train_cmd->add_option("--data-dir", train_args.run.data_dir, "Directory of .ppm images")
      ->required();
  train_cmd->add_option("--out", train_args.run.checkpoint_path, "Checkpoint output path")
      ->required();
  train_cmd->add_option("--log", train_args.run.log_path, "CSV log path (default: <out>.log.csv)");
  train_cmd->add_option("--scale", train_args.scale, "Single training scale (2, 3 or 4)");
  train_cmd->add_flag("--multi-scale", train_args.multi_scale, "Train scales 2, 3 and 4 jointly");
  train_cmd->add_option("--c", train_args.run.model.channels, "Feature channels");
  train_cmd->add_option("--s", train_args.run.model.state_channels, "Block-state channels");
  train_cmd->add_option("--recursions", train_args.run.model.recursions, "Recursion count");
  train_cmd->add_option("--freq-control", train_args.run.model.freq_control, "Head period");
  train_cmd->add_option("--batch", train_args.run.train.batch, "Patches per step");
  train_cmd->add_option("--patch", train_args.run.train.patch, "LR patch side length")
      ->each([&](const std::string&) { train_args.patch_given = true; });
  train_cmd->add_option("--steps", train_args.run.steps, "Optimizer steps to run");
  train_cmd->add_option("--lr", train_args.run.train.base_lr, "Base learning rate");
  train_cmd->add_option("--lr-halve-every", train_args.run.train.halve_every,
                        "Steps between learning-rate halvings");
  train_cmd->add_option("--clip", train_args.run.train.clip_norm, "Per-tensor gradient norm cap");
  train_cmd->add_option("--seed", train_args.run.train.seed, "Master RNG seed");
  train_cmd->add_option("--log-every", train_args.run.log_every, "Steps between CSV rows");
  train_cmd->add_option("--checkpoint-every", train_args.run.checkpoint_every,
                        "Steps between periodic checkpoints (0: final only)");
  train_cmd->add_option("--resume", train_args.run.resume_path, "Continue from a checkpoint");
  train_cmd->add_option("--threads", train_args.run.threads, "Worker threads per batch");

  // ---- upscale ----
  auto* up_cmd = app.add_subcommand("upscale", "Upscale one image with a trained model");
  UpscaleArgs up_args;
  up_cmd->add_option("--checkpoint", up_args.checkpoint, "Trained checkpoint")->required();
  up_cmd->add_option("--input", up_args.input, "Input .ppm image")->required();
  up_cmd->add_option("--out", up_args.output, "Output .ppm image")->required();
  up_cmd->add_option("--scale", up_args.scale, "Upscaling factor (default: the trained one)");
  up_cmd->add_option("--freq-control", up_args.freq_control,
                     "Head period override (quality/speed dial)");
  up_cmd->add_option("--emit-intermediate", up_args.emit_dir,
                     "Also write every intermediate prediction to this directory");
  up_cmd->add_option("--time-runs", up_args.time_runs, "Timing repetitions (median reported)");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate PSNR/SSIM against ground truth");
  EvalArgs eval_args;
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "Trained checkpoint");
  eval_cmd->add_option("--data-dir", eval_args.data_dir, "Directory of ground-truth .ppm images")
      ->required();
  eval_cmd->add_option("--scale", eval_args.scale, "Upscaling factor (1: identity debug)")
      ->required();
  eval_cmd->add_option("--out", eval_args.out_csv, "CSV output path (default: stdout)");
  eval_cmd->add_option("--shave", eval_args.shave, "Border shave (default: scale)");
  eval_cmd->add_option("--time-runs", eval_args.time_runs, "Timing repetitions (median reported)");
  eval_cmd->add_option("--freq-control", eval_args.freq_control, "Head period override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (params_cmd->parsed()) return cmd_params(params_scales, params_c, params_s);
    if (grad_cmd->parsed()) return cmd_gradcheck(grad_options);
    if (train_cmd->parsed()) return cmd_train(train_args);
    if (up_cmd->parsed()) return cmd_upscale(up_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
