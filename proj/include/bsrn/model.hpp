#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bsrn/ops.hpp"
#include "bsrn/tensor.hpp"

namespace bsrn {

using Kernel = ConvKernel<float>;

struct ModelConfig {
  int channels = 64;        // feature width carried between recursions
  int state_channels = 64;  // block-state width (0 disables the state path)
  int recursions = 16;      // times the shared block is applied
  int freq_control = 1;     // evaluate heads every freq_control-th recursion
  std::vector<int> scales = {2, 3, 4};

  void validate() const;
  bool has_scale(int scale) const;
};

// One upscaling head: expansion conv + depth-to-space per stage (x2 and x3
// need one stage, x4 chains two unshared x2 stages), then a conv to RGB.
struct ScaleHead {
  std::vector<Kernel> expand;
  Kernel to_rgb;
};

// Sub-pixel stage factors for a scale: {2}, {3}, or {2, 2}.
std::vector<int> head_stages(int scale);

struct ModelParams {
  Kernel init_conv;                 // 3 -> channels
  std::array<Kernel, 3> rrb_convs;  // (channels+state) -> (channels+state), shared by every recursion
  std::map<int, ScaleHead> heads;   // keyed by scale factor
};

// Zero-valued parameters with the shapes the config dictates.
ModelParams make_params(const ModelConfig& config);

// Same structure with zero values; used for gradient accumulators.
ModelParams zeros_like(const ModelParams& params);

// Uniform init in +-sqrt(6 / fan_in) with fan_in = 9 * in_channels; biases
// zero. Draws are consumed in canonical tensor order, so a seed pins every
// weight.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Visits every kernel as (name, kernel) in canonical order: init conv, the
// three shared recursion convs, then heads by ascending scale. Checkpoints,
// gradient logging and the optimizer all rely on this order.
template <typename Params, typename Fn>
void for_each_kernel(Params& params, Fn&& fn) {
  fn("init_conv", params.init_conv);
  fn("rrb_conv0", params.rrb_convs[0]);
  fn("rrb_conv1", params.rrb_convs[1]);
  fn("rrb_conv2", params.rrb_convs[2]);
  for (auto& entry : params.heads) {
    const std::string base = "head_x" + std::to_string(entry.first);
    for (std::size_t k = 0; k < entry.second.expand.size(); ++k)
      fn(base + ".expand" + std::to_string(k), entry.second.expand[k]);
    fn(base + ".final", entry.second.to_rgb);
  }
}

// Flattens the kernel visit into (name, flat array) pairs: <kernel>.weight
// then <kernel>.bias.
template <typename Params, typename Fn>
void for_each_tensor(Params& params, Fn&& fn) {
  for_each_kernel(params, [&](const std::string& name, auto& kernel) {
    fn(name + ".weight", kernel.weights);
    fn(name + ".bias", kernel.bias);
  });
}

std::vector<std::string> tensor_names(const ModelConfig& config);

// Total trainable parameters for a model serving one scale (body + that
// scale's head).
std::int64_t count_params(const ModelConfig& config, int scale);
std::int64_t body_param_count(const ModelConfig& config);
std::int64_t head_param_count(const ModelConfig& config, int scale);

// Features carried between recursions: the output path H and the block state
// S. S never feeds an upscaling head directly.
struct RecursionState {
  FeatureMap h;
  FeatureMap s;
};

// Initial state: H0 from the 3->channels conv, S0 all zeros.
RecursionState extract_features(const FeatureMap& image, const ModelParams& params,
                                const ModelConfig& config);

// One application of the shared recursive block. Three convs over the packed
// [H, S] stack, one ReLU after the first conv, and two residual adds of the
// incoming H onto the H half (after the second and third convs).
RecursionState rrb_step(const RecursionState& state, const ModelParams& params);

// States after recursion 1..recursions.
std::vector<RecursionState> run_recursion(const RecursionState& initial, const ModelParams& params,
                                          int recursions);

// Upscale a feature map to RGB through the head for `scale`.
FeatureMap upscale_head(const FeatureMap& features, const ModelParams& params, int scale);

// Normalized weights (doubles, computed as exact powers of two before
// normalization) for combining the intermediate outputs produced every
// freq_control-th recursion: weight of output t is 2^(freq_control*t - 1)
// pre-normalization, t = 1..recursions/freq_control.
std::vector<double> combine_weights(int recursions, int freq_control);

// Weighted sum of the intermediate outputs with combine_weights.
FeatureMap combine_outputs(const std::vector<FeatureMap>& outputs, int recursions,
                           int freq_control);

struct ForwardResult {
  FeatureMap output;                       // combined prediction, not clamped
  int head_evals = 0;                      // number of upscaling-head runs
  std::vector<FeatureMap> intermediates;   // per-eval predictions (when requested)
  std::vector<FeatureMap> feature_means;   // channel mean of H_t per recursion (when requested)
  std::vector<FeatureMap> state_means;     // channel mean of S_t per recursion (when requested)
};

// Full inference pass. freq_control == 0 means "use config.freq_control";
// any other value overrides it (it must still divide config.recursions).
ForwardResult forward(const FeatureMap& image, const ModelParams& params,
                      const ModelConfig& config, int scale, int freq_control = 0,
                      bool emit_intermediate = false);

// ---- training-time forward with saved intermediates ----

struct RrbStepTape {
  FeatureMap cat_in;   // packed [H, S] fed to the first conv
  FeatureMap pre_act;  // first conv output, before ReLU
  FeatureMap act;      // after ReLU (second conv input)
  FeatureMap cat_mid;  // third conv input (second conv output + H residual)
};

struct HeadTape {
  std::vector<FeatureMap> conv_inputs;  // input of each expansion conv, then of the RGB conv
};

struct ForwardTape {
  FeatureMap input;
  int scale = 0;
  int freq_control = 0;
  std::vector<RrbStepTape> steps;      // one per recursion
  std::vector<HeadTape> head_tapes;    // one per head evaluation
  std::vector<FeatureMap> outputs;     // intermediate predictions
  std::vector<double> weights;         // normalized combination weights
  FeatureMap combined;
};

ForwardTape forward_with_tape(const FeatureMap& image, const ModelParams& params,
                              const ModelConfig& config, int scale, int freq_control = 0);

// Backpropagates grad_output (d loss / d combined prediction) through the
// tape. Gradients of the shared recursion convs accumulate across all
// recursions; the result has the same structure as the parameters.
ModelParams backward(const ForwardTape& tape, const ModelParams& params,
                     const ModelConfig& config, const FeatureMap& grad_output);

}  // namespace bsrn
