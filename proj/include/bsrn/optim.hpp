#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "bsrn/model.hpp"

namespace bsrn {

struct LossGrad {
  double loss = 0.0;
  FeatureMap grad;
};

// Mean absolute error normalized by the spatial area only (channel dimension
// is summed, not averaged): loss = sum |pred - target| / (height * width).
// The gradient uses sign(0) = 0.
LossGrad l1_loss(const FeatureMap& prediction, const FeatureMap& target);

// Flat references to all tensors of a parameter set, in canonical order.
std::vector<std::pair<std::string, ArrayX<float>*>> tensor_refs(ModelParams& params);
std::vector<std::pair<std::string, const ArrayX<float>*>> tensor_refs(const ModelParams& params);

// L2 norm of one flat tensor, accumulated in double.
double tensor_l2_norm(const ArrayX<float>& t);

// Scales grad down to L2 norm max_norm when it exceeds it (no-op otherwise);
// returns the pre-clip norm. Applied per named tensor.
double clip_gradient(ArrayX<float>& grad, double max_norm);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates, shaped like the parameters.
struct AdamState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;  // completed optimizer steps
};

AdamState make_adam_state(const ModelConfig& config);

// One Adam update of a single flat tensor. step is 1-based (the step being
// applied); bias corrections use it directly.
void adam_update(ArrayX<float>& param, const ArrayX<float>& grad, ArrayX<float>& m,
                 ArrayX<float>& v, std::int64_t step, double lr, const AdamConfig& config);

// Applies adam_update across all tensors and advances state.step.
void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               const AdamConfig& config = {});

struct TrainConfig {
  int batch = 8;
  int patch = 32;
  double base_lr = 1e-4;
  std::int64_t halve_every = 200000;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  AdamConfig adam;
};

// Step-decay schedule: base_lr halved once per halve_every completed steps.
double lr_schedule(std::int64_t step, const TrainConfig& config);

}  // namespace bsrn
