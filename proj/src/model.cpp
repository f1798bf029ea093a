#include "bsrn/model.hpp"

#include <cmath>
#include <set>

#include "bsrn/rng.hpp"

namespace bsrn {

void ModelConfig::validate() const {
  if (channels < 1) throw ConfigError("channels must be >= 1");
  if (state_channels < 0) throw ConfigError("state_channels must be >= 0");
  if (recursions < 1) throw ConfigError("recursions must be >= 1");
  if (freq_control < 1 || freq_control > recursions || recursions % freq_control != 0)
    throw ConfigError("freq_control must be in 1..recursions and divide recursions (got " +
                      std::to_string(freq_control) + " for " + std::to_string(recursions) + ")");
  if (scales.empty()) throw ConfigError("at least one scale is required");
  std::set<int> seen;
  for (int f : scales) {
    if (f < 2 || f > 4) throw ConfigError("unsupported scale x" + std::to_string(f));
    if (!seen.insert(f).second) throw ConfigError("duplicate scale x" + std::to_string(f));
  }
}

bool ModelConfig::has_scale(int scale) const {
  for (int f : scales)
    if (f == scale) return true;
  return false;
}

std::vector<int> head_stages(int scale) {
  switch (scale) {
    case 2: return {2};
    case 3: return {3};
    case 4: return {2, 2};
    default: throw ConfigError("unsupported scale x" + std::to_string(scale));
  }
}

ModelParams make_params(const ModelConfig& config) {
  config.validate();
  const int c = config.channels;
  const int cs = c + config.state_channels;
  ModelParams p;
  p.init_conv = Kernel(3, c);
  for (auto& k : p.rrb_convs) k = Kernel(cs, cs);
  for (int scale : config.scales) {
    ScaleHead head;
    for (int f : head_stages(scale)) head.expand.emplace_back(c, f * f * c);
    head.to_rgb = Kernel(c, 3);
    p.heads.emplace(scale, std::move(head));
  }
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  for_each_tensor(z, [](const std::string&, ArrayX<float>& a) { a.setZero(); });
  return z;
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  ModelParams p = make_params(config);
  Rng rng(seed);
  for_each_kernel(p, [&](const std::string&, Kernel& k) {
    const double bound = std::sqrt(6.0 / (9.0 * k.in_channels));
    for (Eigen::Index j = 0; j < k.weights.size(); ++j)
      k.weights[j] = static_cast<float>(bound * (2.0 * rng.u01() - 1.0));
  });
  return p;
}

std::vector<std::string> tensor_names(const ModelConfig& config) {
  const ModelParams p = make_params(config);
  std::vector<std::string> names;
  for_each_tensor(p, [&](const std::string& name, const ArrayX<float>&) { names.push_back(name); });
  return names;
}

namespace {

std::int64_t kernel_count(std::int64_t in, std::int64_t out) { return 9 * in * out + out; }

}  // namespace

std::int64_t body_param_count(const ModelConfig& config) {
  const std::int64_t c = config.channels;
  const std::int64_t cs = c + config.state_channels;
  return kernel_count(3, c) + 3 * kernel_count(cs, cs);
}

std::int64_t head_param_count(const ModelConfig& config, int scale) {
  const std::int64_t c = config.channels;
  std::int64_t total = 0;
  for (int f : head_stages(scale)) total += kernel_count(c, f * f * c);
  return total + kernel_count(c, 3);
}

std::int64_t count_params(const ModelConfig& config, int scale) {
  return body_param_count(config) + head_param_count(config, scale);
}

RecursionState extract_features(const FeatureMap& image, const ModelParams& params,
                                const ModelConfig& config) {
  if (image.channels() != 3)
    throw ShapeError("extract_features: expected a 3-channel image, got " + image.shape_str());
  FeatureMap h = conv2d_forward(image, params.init_conv);
  FeatureMap s(config.state_channels, image.height(), image.width());
  return {std::move(h), std::move(s)};
}

namespace {

// Adds the H half of the state onto the first channels of a packed map.
void add_h_residual(FeatureMap& packed, const FeatureMap& h) {
  packed.array().head(h.size()) += h.array();
}

RecursionState rrb_step_impl(const RecursionState& state, const ModelParams& params,
                             RrbStepTape* tape) {
  const int c = state.h.channels();
  FeatureMap packed = concat_channels(state.h, state.s);
  FeatureMap pre = conv2d_forward(packed, params.rrb_convs[0]);
  FeatureMap act = relu_forward(pre);
  FeatureMap mid = conv2d_forward(act, params.rrb_convs[1]);
  add_h_residual(mid, state.h);
  FeatureMap out = conv2d_forward(mid, params.rrb_convs[2]);
  add_h_residual(out, state.h);
  if (tape) {
    tape->cat_in = std::move(packed);
    tape->pre_act = std::move(pre);
    tape->act = std::move(act);
    tape->cat_mid = std::move(mid);
  }
  auto halves = split_channels(out, c);
  return {std::move(halves.first), std::move(halves.second)};
}

FeatureMap head_forward_impl(const FeatureMap& features, const ScaleHead& head,
                             const std::vector<int>& stages, HeadTape* tape) {
  FeatureMap x = features;
  for (std::size_t k = 0; k < stages.size(); ++k) {
    if (tape) tape->conv_inputs.push_back(x);
    x = depth_to_space(conv2d_forward(x, head.expand[k]), stages[k]);
  }
  if (tape) tape->conv_inputs.push_back(x);
  return conv2d_forward(x, head.to_rgb);
}

const ScaleHead& head_for(const ModelParams& params, const ModelConfig& config, int scale) {
  if (!config.has_scale(scale))
    throw ConfigError("model was not configured for scale x" + std::to_string(scale));
  auto it = params.heads.find(scale);
  if (it == params.heads.end())
    throw ConfigError("parameters carry no head for scale x" + std::to_string(scale));
  return it->second;
}

int resolve_freq_control(const ModelConfig& config, int freq_control) {
  const int r = freq_control == 0 ? config.freq_control : freq_control;
  if (r < 1 || r > config.recursions || config.recursions % r != 0)
    throw ConfigError("freq_control " + std::to_string(r) + " must divide recursions " +
                      std::to_string(config.recursions));
  return r;
}

// Mean over channels, kept as a 1-channel map.
FeatureMap channel_mean(const FeatureMap& t) {
  FeatureMap m(1, t.height(), t.width());
  for (int c = 0; c < t.channels(); ++c) m.array() += t.array().segment(t.plane() * c, t.plane());
  if (t.channels() > 0) m.array() /= static_cast<float>(t.channels());
  return m;
}

}  // namespace

RecursionState rrb_step(const RecursionState& state, const ModelParams& params) {
  return rrb_step_impl(state, params, nullptr);
}

std::vector<RecursionState> run_recursion(const RecursionState& initial, const ModelParams& params,
                                          int recursions) {
  if (recursions < 1) throw ConfigError("recursions must be >= 1");
  std::vector<RecursionState> states;
  states.reserve(recursions);
  RecursionState st = initial;
  for (int t = 0; t < recursions; ++t) {
    st = rrb_step(st, params);
    states.push_back(st);
  }
  return states;
}

FeatureMap upscale_head(const FeatureMap& features, const ModelParams& params, int scale) {
  const ScaleHead& head = [&]() -> const ScaleHead& {
    auto it = params.heads.find(scale);
    if (it == params.heads.end())
      throw ConfigError("parameters carry no head for scale x" + std::to_string(scale));
    return it->second;
  }();
  return head_forward_impl(features, head, head_stages(scale), nullptr);
}

std::vector<double> combine_weights(int recursions, int freq_control) {
  if (recursions < 1 || freq_control < 1 || freq_control > recursions ||
      recursions % freq_control != 0)
    throw ConfigError("combine_weights: freq_control must divide recursions");
  const int n = recursions / freq_control;
  std::vector<double> w(n);
  double sum = 0.0;
  for (int t = 1; t <= n; ++t) {
    w[t - 1] = std::ldexp(1.0, freq_control * t - 1);
    sum += w[t - 1];
  }
  for (double& v : w) v /= sum;
  return w;
}

FeatureMap combine_outputs(const std::vector<FeatureMap>& outputs, int recursions,
                           int freq_control) {
  const std::vector<double> w = combine_weights(recursions, freq_control);
  if (outputs.size() != w.size())
    throw ShapeError("combine_outputs: expected " + std::to_string(w.size()) + " outputs, got " +
                     std::to_string(outputs.size()));
  for (const auto& o : outputs)
    if (!o.same_shape(outputs.front()))
      throw ShapeError("combine_outputs: mismatched output shapes");
  // A single output carries weight exactly 1; pass it through untouched so the
  // combined prediction is bit-identical to the last intermediate.
  if (outputs.size() == 1) return outputs.front();
  FeatureMap acc = zeros_like(outputs.front());
  for (std::size_t t = 0; t < outputs.size(); ++t)
    acc.array() += static_cast<float>(w[t]) * outputs[t].array();
  return acc;
}

ForwardResult forward(const FeatureMap& image, const ModelParams& params,
                      const ModelConfig& config, int scale, int freq_control,
                      bool emit_intermediate) {
  config.validate();
  const int r = resolve_freq_control(config, freq_control);
  const ScaleHead& head = head_for(params, config, scale);
  const std::vector<int> stages = head_stages(scale);

  RecursionState st = extract_features(image, params, config);
  ForwardResult res;
  std::vector<FeatureMap> outputs;
  outputs.reserve(config.recursions / r);
  for (int t = 1; t <= config.recursions; ++t) {
    st = rrb_step(st, params);
    if (emit_intermediate) {
      res.feature_means.push_back(channel_mean(st.h));
      if (config.state_channels > 0) res.state_means.push_back(channel_mean(st.s));
    }
    if (t % r == 0) {
      outputs.push_back(head_forward_impl(st.h, head, stages, nullptr));
      ++res.head_evals;
    }
  }
  res.output = combine_outputs(outputs, config.recursions, r);
  if (emit_intermediate) res.intermediates = std::move(outputs);
  return res;
}

ForwardTape forward_with_tape(const FeatureMap& image, const ModelParams& params,
                              const ModelConfig& config, int scale, int freq_control) {
  config.validate();
  const int r = resolve_freq_control(config, freq_control);
  const ScaleHead& head = head_for(params, config, scale);
  const std::vector<int> stages = head_stages(scale);

  ForwardTape tape;
  tape.input = image;
  tape.scale = scale;
  tape.freq_control = r;
  tape.steps.resize(config.recursions);

  RecursionState st = extract_features(image, params, config);
  for (int t = 1; t <= config.recursions; ++t) {
    st = rrb_step_impl(st, params, &tape.steps[t - 1]);
    if (t % r == 0) {
      HeadTape ht;
      tape.outputs.push_back(head_forward_impl(st.h, head, stages, &ht));
      tape.head_tapes.push_back(std::move(ht));
    }
  }
  tape.weights = combine_weights(config.recursions, r);
  tape.combined = combine_outputs(tape.outputs, config.recursions, r);
  return tape;
}

namespace {

void add_kernel(Kernel& dst, const Kernel& src) {
  dst.weights += src.weights;
  dst.bias += src.bias;
}

// Backward through one head evaluation; accumulates parameter gradients and
// returns the gradient with respect to the head's input features.
FeatureMap head_backward(const HeadTape& tape, const ScaleHead& head, ScaleHead& head_grads,
                         const std::vector<int>& stages, const FeatureMap& grad_out) {
  auto g_rgb = conv2d_backward(tape.conv_inputs.back(), head.to_rgb, grad_out);
  add_kernel(head_grads.to_rgb, g_rgb.kernel);
  FeatureMap g = std::move(g_rgb.input);
  for (int k = static_cast<int>(stages.size()) - 1; k >= 0; --k) {
    g = space_to_depth(g, stages[k]);
    auto g_exp = conv2d_backward(tape.conv_inputs[k], head.expand[k], g);
    add_kernel(head_grads.expand[k], g_exp.kernel);
    g = std::move(g_exp.input);
  }
  return g;
}

// Backward through one recursion. gh/gs carry the gradient with respect to
// the step's output state on entry and its input state on exit. The incoming
// H reaches the output three ways (two residual adds plus the first conv), so
// its gradient is the sum of those three paths.
void rrb_step_backward(const RrbStepTape& tape, const ModelParams& params, ModelParams& grads,
                       FeatureMap& gh, FeatureMap& gs) {
  const Eigen::Index h_size = gh.size();

  FeatureMap gz = concat_channels(gh, gs);
  auto g3 = conv2d_backward(tape.cat_mid, params.rrb_convs[2], gz);
  add_kernel(grads.rrb_convs[2], g3.kernel);
  FeatureMap gmid = std::move(g3.input);

  auto g2 = conv2d_backward(tape.act, params.rrb_convs[1], gmid);
  add_kernel(grads.rrb_convs[1], g2.kernel);
  FeatureMap gpre = relu_backward(tape.pre_act, g2.input);

  auto g1 = conv2d_backward(tape.cat_in, params.rrb_convs[0], gpre);
  add_kernel(grads.rrb_convs[0], g1.kernel);

  gh.array() += gmid.array().head(h_size) + g1.input.array().head(h_size);
  gs.array() = g1.input.array().tail(gs.size());
}

}  // namespace

ModelParams backward(const ForwardTape& tape, const ModelParams& params,
                     const ModelConfig& config, const FeatureMap& grad_output) {
  config.validate();
  if (!grad_output.same_shape(tape.combined))
    throw ShapeError("backward: grad_output " + grad_output.shape_str() +
                     " does not match prediction " + tape.combined.shape_str());
  const int r = tape.freq_control;
  const std::vector<int> stages = head_stages(tape.scale);
  const ScaleHead& head = head_for(params, config, tape.scale);

  ModelParams grads = zeros_like(params);
  ScaleHead& head_grads = grads.heads.at(tape.scale);

  std::vector<FeatureMap> inject(tape.outputs.size());
  for (std::size_t t = 0; t < tape.outputs.size(); ++t) {
    FeatureMap gy = zeros_like(tape.outputs[t]);
    gy.array() = grad_output.array() * static_cast<float>(tape.weights[t]);
    inject[t] = head_backward(tape.head_tapes[t], head, head_grads, stages, gy);
  }

  FeatureMap gh(config.channels, tape.input.height(), tape.input.width());
  FeatureMap gs(config.state_channels, tape.input.height(), tape.input.width());
  for (int step = config.recursions; step >= 1; --step) {
    if (step % r == 0) gh.array() += inject[step / r - 1].array();
    rrb_step_backward(tape.steps[step - 1], params, grads, gh, gs);
  }

  auto g0 = conv2d_backward(tape.input, params.init_conv, gh);
  grads.init_conv = std::move(g0.kernel);
  return grads;
}

}  // namespace bsrn
