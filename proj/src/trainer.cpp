#include "bsrn/trainer.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <future>

#include "bsrn/errors.hpp"
#include "bsrn/rng.hpp"

namespace bsrn {

namespace {

struct ItemGrads {
  double loss = 0.0;
  ModelParams grads;
};

ItemGrads item_pass(const ModelParams& params, const ModelConfig& config, const PatchPair& item,
                    int scale) {
  ForwardTape tape = forward_with_tape(item.lr, params, config, scale);
  LossGrad lg = l1_loss(tape.combined, item.hr);
  ItemGrads out;
  out.loss = lg.loss;
  out.grads = backward(tape, params, config, lg.grad);
  return out;
}

}  // namespace

StepStats train_step(ModelParams& params, AdamState& opt, const ModelConfig& model_config,
                     const TrainConfig& train_config, const std::vector<PatchPair>& batch,
                     int scale, std::int64_t global_step, int threads) {
  if (batch.empty()) throw ConfigError("train_step: empty batch");
  for (const auto& item : batch) {
    const int f = item.scale;
    if (f != scale) throw ConfigError("train_step: batch item scale mismatch");
    if (item.hr.height() != item.lr.height() * f || item.hr.width() != item.lr.width() * f)
      throw ShapeError("train_step: HR patch is not LR x" + std::to_string(f));
  }

  // Per-item passes may run on worker threads, but accumulation below always
  // walks items in batch order, so thread count never changes the result.
  std::vector<ItemGrads> items(batch.size());
  if (threads > 1) {
    std::vector<std::future<ItemGrads>> futures;
    futures.reserve(batch.size());
    for (const auto& item : batch)
      futures.push_back(std::async(std::launch::async, item_pass, std::cref(params),
                                   std::cref(model_config), std::cref(item), scale));
    for (std::size_t i = 0; i < futures.size(); ++i) items[i] = futures[i].get();
  } else {
    for (std::size_t i = 0; i < batch.size(); ++i)
      items[i] = item_pass(params, model_config, batch[i], scale);
  }

  StepStats stats;
  stats.scale = scale;
  ModelParams grads = items.front().grads;
  stats.loss = items.front().loss;
  for (std::size_t i = 1; i < items.size(); ++i) {
    auto dst = tensor_refs(grads);
    auto src = tensor_refs(items[i].grads);
    for (std::size_t t = 0; t < dst.size(); ++t) *dst[t].second += *src[t].second;
    stats.loss += items[i].loss;
  }
  stats.loss /= static_cast<double>(batch.size());
  const float inv_batch = static_cast<float>(1.0 / static_cast<double>(batch.size()));

  for (auto& [name, tensor] : tensor_refs(grads)) {
    *tensor *= inv_batch;
    stats.grad_norms.push_back(clip_gradient(*tensor, train_config.clip_norm));
  }

  stats.lr = lr_schedule(global_step, train_config);
  adam_step(params, grads, opt, stats.lr, train_config.adam);
  return stats;
}

std::string train_log_header(const ModelConfig& config) {
  std::string header = "step,lr,loss";
  for (const std::string& name : tensor_names(config)) header += "," + name + "_gradnorm";
  return header;
}

std::string train_log_row(std::int64_t step, const StepStats& stats) {
  char num[64];
  std::snprintf(num, sizeof(num), "%" PRId64, step);
  std::string row = num;
  const auto push = [&](double v) {
    std::snprintf(num, sizeof(num), ",%.17g", v);
    row += num;
  };
  push(stats.lr);
  push(stats.loss);
  for (double n : stats.grad_norms) push(n);
  return row;
}

Checkpoint run_training(const TrainRun& run) {
  run.model.validate();
  if (run.steps < 0) throw ConfigError("run_training: negative step count");
  if (run.train.batch < 1) throw ConfigError("run_training: batch must be >= 1");
  if (run.train.patch < 1) throw ConfigError("run_training: patch must be >= 1");
  for (int f : run.model.scales)
    if (run.train.patch % f != 0)
      throw ConfigError("patch " + std::to_string(run.train.patch) +
                        " is not a multiple of trained scale x" + std::to_string(f));

  Dataset dataset(run.data_dir, run.model.scales);
  for (int f : run.model.scales)
    if (dataset.min_lr_dim(f) < run.train.patch)
      throw ConfigError("patch " + std::to_string(run.train.patch) +
                        " exceeds the smallest x" + std::to_string(f) + " LR image (" +
                        std::to_string(dataset.min_lr_dim(f)) + " px)");

  Checkpoint ckpt;
  if (!run.resume_path.empty()) {
    ckpt = load_checkpoint(run.resume_path);
    const ModelConfig& a = ckpt.config;
    const ModelConfig& b = run.model;
    if (a.channels != b.channels || a.state_channels != b.state_channels ||
        a.recursions != b.recursions || a.freq_control != b.freq_control || a.scales != b.scales)
      throw ConfigError(run.resume_path + ": checkpoint config does not match the requested run");
  } else {
    ckpt.config = run.model;
    ckpt.params = init_params(run.model, run.train.seed);
    ckpt.opt = make_adam_state(run.model);
    ckpt.step = 0;
  }

  std::ofstream log;
  if (!run.log_path.empty()) {
    log.open(run.log_path);
    if (!log) throw std::runtime_error(run.log_path + ": cannot open for writing");
    log << train_log_header(run.model) << '\n';
    log.flush();
  }

  const std::int64_t first = static_cast<std::int64_t>(ckpt.step);
  for (std::int64_t step = first; step < first + run.steps; ++step) {
    Rng rng(seed_for_step(run.train.seed, static_cast<std::uint64_t>(step)));
    const int scale =
        run.model.scales.size() == 1 ? run.model.scales.front() : sample_scale(rng, run.model.scales);
    std::vector<PatchPair> batch;
    batch.reserve(run.train.batch);
    for (int b = 0; b < run.train.batch; ++b) {
      const std::size_t idx = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(dataset.size())));
      batch.push_back(augment(sample_patch(dataset.at(idx, scale), scale, run.train.patch, rng), rng));
    }

    const StepStats stats =
        train_step(ckpt.params, ckpt.opt, run.model, run.train, batch, scale, step, run.threads);
    ckpt.step = static_cast<std::uint64_t>(step + 1);

    if (log.is_open() && (run.log_every <= 1 || step % run.log_every == 0)) {
      log << train_log_row(step, stats) << '\n';
      log.flush();
    }
    if (run.checkpoint_every > 0 && (step + 1) % run.checkpoint_every == 0 &&
        !run.checkpoint_path.empty())
      save_checkpoint(ckpt, run.checkpoint_path);
  }

  if (!run.checkpoint_path.empty()) save_checkpoint(ckpt, run.checkpoint_path);
  return ckpt;
}

}  // namespace bsrn
