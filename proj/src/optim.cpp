#include "bsrn/optim.hpp"

#include <cmath>

namespace bsrn {

LossGrad l1_loss(const FeatureMap& prediction, const FeatureMap& target) {
  if (!prediction.same_shape(target))
    throw ShapeError("l1_loss: prediction " + prediction.shape_str() + " vs target " +
                     target.shape_str());
  if (prediction.plane() == 0) throw ShapeError("l1_loss: empty spatial dims");
  LossGrad out;
  const auto diff = prediction.array() - target.array();
  out.loss = diff.abs().cast<double>().sum() / static_cast<double>(prediction.plane());
  out.grad = zeros_like(prediction);
  out.grad.array() = diff.sign() * static_cast<float>(1.0 / static_cast<double>(prediction.plane()));
  return out;
}

std::vector<std::pair<std::string, ArrayX<float>*>> tensor_refs(ModelParams& params) {
  std::vector<std::pair<std::string, ArrayX<float>*>> refs;
  for_each_tensor(params, [&](const std::string& name, ArrayX<float>& a) {
    refs.emplace_back(name, &a);
  });
  return refs;
}

std::vector<std::pair<std::string, const ArrayX<float>*>> tensor_refs(const ModelParams& params) {
  std::vector<std::pair<std::string, const ArrayX<float>*>> refs;
  for_each_tensor(params, [&](const std::string& name, const ArrayX<float>& a) {
    refs.emplace_back(name, &a);
  });
  return refs;
}

double tensor_l2_norm(const ArrayX<float>& t) {
  return std::sqrt(t.cast<double>().square().sum());
}

double clip_gradient(ArrayX<float>& grad, double max_norm) {
  const double norm = tensor_l2_norm(grad);
  if (norm > max_norm) grad *= static_cast<float>(max_norm / norm);
  return norm;
}

AdamState make_adam_state(const ModelConfig& config) {
  AdamState st;
  st.m = make_params(config);
  st.v = make_params(config);
  st.step = 0;
  return st;
}

void adam_update(ArrayX<float>& param, const ArrayX<float>& grad, ArrayX<float>& m,
                 ArrayX<float>& v, std::int64_t step, double lr, const AdamConfig& config) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size())
    throw ShapeError("adam_update: tensor size mismatch");
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  m = b1 * m + (1.0f - b1) * grad;
  v = b2 * v + (1.0f - b2) * grad.square();
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));
  param -= (static_cast<float>(lr / bc1) * m) /
           ((static_cast<float>(1.0 / bc2) * v).sqrt() + static_cast<float>(config.eps));
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state, double lr,
               const AdamConfig& config) {
  ++state.step;
  auto p = tensor_refs(params);
  auto g = tensor_refs(grads);
  auto m = tensor_refs(state.m);
  auto v = tensor_refs(state.v);
  if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size())
    throw ShapeError("adam_step: parameter/gradient structure mismatch");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i].first != g[i].first)
      throw ShapeError("adam_step: tensor order mismatch at " + p[i].first);
    adam_update(*p[i].second, *g[i].second, *m[i].second, *v[i].second, state.step, lr, config);
  }
}

double lr_schedule(std::int64_t step, const TrainConfig& config) {
  if (step < 0) throw ConfigError("lr_schedule: negative step");
  const std::int64_t halvings = config.halve_every > 0 ? step / config.halve_every : 0;
  return std::ldexp(config.base_lr, -static_cast<int>(halvings));
}

}  // namespace bsrn
