#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bsrn/checkpoint.hpp"
#include "bsrn/data.hpp"
#include "bsrn/model.hpp"
#include "bsrn/optim.hpp"

namespace bsrn {

struct StepStats {
  double loss = 0.0;  // batch-mean L1
  double lr = 0.0;
  int scale = 0;
  // Pre-clip L2 norm per tensor, canonical order.
  std::vector<double> grad_norms;
};

// One optimizer step on a fixed batch: forward/backward per item, gradients
// averaged over the batch in item order, per-tensor norm clipping, then Adam
// at the scheduled rate for `global_step` (0-based: the step about to run).
StepStats train_step(ModelParams& params, AdamState& opt, const ModelConfig& model_config,
                     const TrainConfig& train_config, const std::vector<PatchPair>& batch,
                     int scale, std::int64_t global_step, int threads = 1);

struct TrainRun {
  ModelConfig model;
  TrainConfig train;
  std::string data_dir;
  std::string checkpoint_path;
  std::string log_path;            // CSV: step, lr, loss, per-tensor grad norms
  std::int64_t steps = 0;          // steps to execute in this invocation
  std::int64_t log_every = 1;
  std::int64_t checkpoint_every = 0;  // 0: only the final checkpoint
  int threads = 1;
  std::string resume_path;         // continue from this checkpoint when set
};

// Full training loop. Every random draw derives from (seed, global step), so
// rerunning — or resuming from any checkpoint — replays the identical
// trajectory bit for bit.
Checkpoint run_training(const TrainRun& run);

// Header + one formatter for the CSV rows, shared with tests.
std::string train_log_header(const ModelConfig& config);
std::string train_log_row(std::int64_t step, const StepStats& stats);

}  // namespace bsrn
