#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bsrn/model.hpp"
#include "bsrn/optim.hpp"
#include "bsrn/rng.hpp"
#include "support/test_util.hpp"
#include "support/untied.hpp"

using namespace bsrn;
using namespace test_util;

namespace {

ModelConfig tiny_config(int c = 2, int s = 2, int recursions = 3, int freq = 1,
                        std::vector<int> scales = {2}) {
  ModelConfig cfg;
  cfg.channels = c;
  cfg.state_channels = s;
  cfg.recursions = recursions;
  cfg.freq_control = freq;
  cfg.scales = std::move(scales);
  return cfg;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent settings") {
  CHECK_THROWS_AS(tiny_config(0).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_config(2, -1).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_config(2, 2, 0).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_config(2, 2, 16, 3).validate(), ConfigError);  // 3 does not divide 16
  CHECK_THROWS_AS(tiny_config(2, 2, 4, 8).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_config(2, 2, 4, 1, {5}).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_config(2, 2, 4, 1, {}).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_config(2, 2, 4, 1, {2, 2}).validate(), ConfigError);
  CHECK_NOTHROW(tiny_config(2, 0, 4, 4, {2, 3, 4}).validate());
}

TEST_CASE("parameter counts: formula, allocation and frozen defaults agree") {
  ModelConfig cfg;  // defaults: c = 64, s = 64, all scales

  // Counting oracle: sum of allocated tensor sizes along the body+head path.
  const ModelParams params = make_params(cfg);
  const auto counted = [&](int scale) {
    std::int64_t body = params.init_conv.param_count();
    for (const auto& k : params.rrb_convs) body += k.param_count();
    std::int64_t head = params.heads.at(scale).to_rgb.param_count();
    for (const auto& k : params.heads.at(scale).expand) head += k.param_count();
    return body + head;
  };

  for (int scale : {2, 3, 4}) CHECK(count_params(cfg, scale) == counted(scale));

  CHECK(count_params(cfg, 2) == 593987);
  CHECK(count_params(cfg, 3) == 778627);
  CHECK(count_params(cfg, 4) == 741699);
  CHECK(body_param_count(cfg) == 444544);

  SUBCASE("ablating the block state removes exactly the widened body weights") {
    ModelConfig slim = cfg;
    slim.state_channels = 0;
    CHECK(count_params(slim, 2) == 262019);
    // 3 convs lose (128^2 - 64^2) * 9 weights and 64 biases each.
    const std::int64_t delta = 3 * (9 * (128 * 128 - 64 * 64) + 64);
    CHECK(count_params(cfg, 2) - count_params(slim, 2) == delta);
    CHECK(delta == 331968);
  }
}

TEST_CASE("head structure: stage factors and unshared x4 stages") {
  CHECK(head_stages(2) == std::vector<int>{2});
  CHECK(head_stages(3) == std::vector<int>{3});
  CHECK(head_stages(4) == std::vector<int>{2, 2});
  CHECK_THROWS_AS(head_stages(5), ConfigError);

  const ModelParams p = init_params(tiny_config(4, 2, 2, 1, {2, 3, 4}), 5);
  CHECK(p.heads.at(4).expand.size() == 2);
  // Two independent tensors, not one shared stage.
  CHECK(p.heads.at(4).expand[0].weights.data() != p.heads.at(4).expand[1].weights.data());
  CHECK((p.heads.at(4).expand[0].weights != p.heads.at(4).expand[1].weights).any());
}

TEST_CASE("canonical tensor order is stable and fully named") {
  const std::vector<std::string> names = tensor_names(tiny_config(2, 2, 2, 1, {2, 4}));
  const std::vector<std::string> want = {
      "init_conv.weight",        "init_conv.bias",
      "rrb_conv0.weight",        "rrb_conv0.bias",
      "rrb_conv1.weight",        "rrb_conv1.bias",
      "rrb_conv2.weight",        "rrb_conv2.bias",
      "head_x2.expand0.weight",  "head_x2.expand0.bias",
      "head_x2.final.weight",    "head_x2.final.bias",
      "head_x4.expand0.weight",  "head_x4.expand0.bias",
      "head_x4.expand1.weight",  "head_x4.expand1.bias",
      "head_x4.final.weight",    "head_x4.final.bias",
  };
  CHECK(names == want);
}

TEST_CASE("init_params: bounds, spread, bias and determinism") {
  const ModelConfig cfg = tiny_config(16, 16, 2, 1, {2});
  const ModelParams a = init_params(cfg, 42);
  const ModelParams b = init_params(cfg, 42);
  const ModelParams c = init_params(cfg, 43);

  bool identical = true;
  bool differs = false;
  for_each_kernel(a, [&](const std::string& name, const Kernel& k) {
    const double bound = std::sqrt(6.0 / (9.0 * k.in_channels));
    CHECK(static_cast<double>(k.weights.abs().maxCoeff()) <= bound);
    CHECK((k.bias == 0.0f).all());

    // Uniform on [-bound, bound] has standard deviation bound/sqrt(3).
    const double mean = k.weights.cast<double>().mean();
    const double sd =
        std::sqrt((k.weights.cast<double>() - mean).square().sum() / (k.weights.size() - 1));
    CHECK(sd == doctest::Approx(bound / std::sqrt(3.0)).epsilon(0.05));

    const Kernel& kb = [&]() -> const Kernel& {
      const Kernel* found = nullptr;
      for_each_kernel(b, [&](const std::string& n2, const Kernel& k2) {
        if (n2 == name) found = &k2;
      });
      return *found;
    }();
    identical = identical && (k.weights == kb.weights).all();
    const Kernel* kc = nullptr;
    for_each_kernel(c, [&](const std::string& n2, const Kernel& k2) {
      if (n2 == name) kc = &k2;
    });
    differs = differs || (k.weights != kc->weights).any();
  });
  CHECK(identical);
  CHECK(differs);
}

TEST_CASE("extract_features: conv oracle and zero block state") {
  Rng rng(31);
  const ModelConfig cfg = tiny_config(3, 2, 2);
  const ModelParams params = init_params(cfg, 7);
  const FeatureMap img = random_map(3, 6, 7, rng, 0.0, 1.0);
  const RecursionState st = extract_features(img, params, cfg);

  CHECK(max_abs_diff(st.h, conv_reference(img, params.init_conv)) < 1e-5);
  CHECK(st.s.channels() == 2);
  CHECK((st.s.array() == 0.0f).all());
  CHECK_THROWS_AS(extract_features(FeatureMap(2, 6, 7), params, cfg), ShapeError);
}

TEST_CASE("rrb_step equals the explicit primitive composition") {
  Rng rng(32);
  const ModelConfig cfg = tiny_config(3, 2, 2);
  const ModelParams params = init_params(cfg, 9);
  RecursionState st;
  st.h = random_map(3, 5, 5, rng);
  st.s = random_map(2, 5, 5, rng);

  const RecursionState got = rrb_step(st, params);

  const FeatureMap packed = concat_channels(st.h, st.s);
  const FeatureMap act = relu_forward(conv2d_forward(packed, params.rrb_convs[0]));
  const FeatureMap mid_raw = conv2d_forward(act, params.rrb_convs[1]);
  const auto mid_halves = split_channels(mid_raw, 3);
  const FeatureMap mid = concat_channels(add(mid_halves.first, st.h), mid_halves.second);
  const FeatureMap out = conv2d_forward(mid, params.rrb_convs[2]);
  const auto out_halves = split_channels(out, 3);

  CHECK(bitwise_equal(got.h, add(out_halves.first, st.h)));
  CHECK(bitwise_equal(got.s, out_halves.second));
}

TEST_CASE("rrb_step with zero parameters is the identity on H") {
  Rng rng(33);
  const ModelConfig cfg = tiny_config(3, 2, 2);
  const ModelParams params = make_params(cfg);  // all zeros
  RecursionState st;
  st.h = random_map(3, 4, 4, rng);
  st.s = random_map(2, 4, 4, rng);
  const RecursionState next = rrb_step(st, params);
  CHECK(bitwise_equal(next.h, st.h));
  CHECK((next.s.array() == 0.0f).all());
}

TEST_CASE("rrb_step handles a zero-width block state") {
  Rng rng(34);
  const ModelConfig cfg = tiny_config(3, 0, 2);
  const ModelParams params = init_params(cfg, 3);
  RecursionState st = extract_features(random_map(3, 4, 4, rng, 0.0, 1.0), params, cfg);
  CHECK(st.s.channels() == 0);
  const RecursionState next = rrb_step(st, params);
  CHECK(next.h.channels() == 3);
  CHECK(next.s.channels() == 0);
  CHECK(next.h.array().isFinite().all());
}

TEST_CASE("run_recursion returns every state in order") {
  Rng rng(35);
  const ModelConfig cfg = tiny_config(2, 2, 4);
  const ModelParams params = init_params(cfg, 21);
  const RecursionState st0 = extract_features(random_map(3, 5, 5, rng, 0.0, 1.0), params, cfg);

  const auto states = run_recursion(st0, params, 4);
  REQUIRE(states.size() == 4);
  RecursionState manual = st0;
  for (int t = 0; t < 4; ++t) {
    manual = rrb_step(manual, params);
    CHECK(bitwise_equal(states[t].h, manual.h));
    CHECK(bitwise_equal(states[t].s, manual.s));
  }
}

TEST_CASE("parameter sharing: one shared weight touches every recursion") {
  Rng rng(36);
  const ModelConfig cfg = tiny_config(2, 2, 4);
  ModelParams params = init_params(cfg, 55);
  const RecursionState st0 = extract_features(random_map(3, 5, 5, rng, 0.0, 1.0), params, cfg);
  const auto before = run_recursion(st0, params, 4);
  params.rrb_convs[0].weights[0] += 0.25f;
  const auto after = run_recursion(st0, params, 4);
  for (int t = 0; t < 4; ++t) CHECK_FALSE(bitwise_equal(before[t].h, after[t].h));
}

TEST_CASE("upscale_head output shapes per scale") {
  Rng rng(37);
  const ModelConfig cfg = tiny_config(4, 2, 2, 1, {2, 3, 4});
  const ModelParams params = init_params(cfg, 8);
  const FeatureMap h = random_map(4, 5, 6, rng);
  for (int scale : {2, 3, 4}) {
    const FeatureMap y = upscale_head(h, params, scale);
    CHECK(y.channels() == 3);
    CHECK(y.height() == 5 * scale);
    CHECK(y.width() == 6 * scale);
  }
  ModelParams no_head = params;
  no_head.heads.erase(3);
  CHECK_THROWS_AS(upscale_head(h, no_head, 3), ConfigError);
}

TEST_CASE("combine_weights: normalization, doubling ratios, degenerate cases") {
  SUBCASE("weights sum to one for every valid split") {
    for (int R : {1, 2, 4, 8, 16, 32, 64}) {
      for (int r = 1; r <= R; ++r) {
        if (R % r != 0) continue;
        const auto w = combine_weights(R, r);
        CHECK(w.size() == static_cast<std::size_t>(R / r));
        double sum = 0.0;
        for (double v : w) sum += v;
        CHECK(std::abs(sum - 1.0) < 1e-12);
      }
    }
  }

  SUBCASE("R=16, r=4 gives powers 8,128,2048,32768 over 34952") {
    const auto w = combine_weights(16, 4);
    REQUIRE(w.size() == 4);
    const double raw[] = {8.0, 128.0, 2048.0, 32768.0};
    for (int t = 0; t < 4; ++t) CHECK(w[t] == doctest::Approx(raw[t] / 34952.0).epsilon(1e-15));
  }

  SUBCASE("a single output takes all the weight exactly") {
    for (int R : {1, 4, 16}) {
      const auto w = combine_weights(R, R);
      REQUIRE(w.size() == 1);
      CHECK(w[0] == 1.0);
    }
  }

  SUBCASE("later outputs always dominate earlier ones") {
    const auto w = combine_weights(16, 1);
    for (std::size_t t = 1; t < w.size(); ++t) CHECK(w[t] > w[t - 1]);
  }

  CHECK_THROWS_AS(combine_weights(16, 3), ConfigError);
  CHECK_THROWS_AS(combine_weights(4, 0), ConfigError);
}

TEST_CASE("combine_outputs: identity for one output, exact mixture for two") {
  Rng rng(38);
  const FeatureMap a = random_map(3, 4, 4, rng);
  const FeatureMap b = random_map(3, 4, 4, rng);

  CHECK(bitwise_equal(combine_outputs({a}, 4, 4), a));

  const FeatureMap mix = combine_outputs({a, b}, 2, 1);
  const auto w = combine_weights(2, 1);
  // Opposing signs can cancel the mixture toward zero, so bound the absolute
  // error against a double-precision oracle rather than counting ulps of the
  // (possibly tiny) result.
  for (Eigen::Index i = 0; i < mix.size(); ++i) {
    const double want = w[0] * static_cast<double>(a.array()[i]) +
                        w[1] * static_cast<double>(b.array()[i]);
    CHECK(std::abs(static_cast<double>(mix.array()[i]) - want) <= 1e-6);
  }

  CHECK_THROWS_AS(combine_outputs({a}, 2, 1), ShapeError);
  CHECK_THROWS_AS(combine_outputs({a, FeatureMap(3, 5, 4)}, 2, 1), ShapeError);
}

TEST_CASE("forward: composition oracle, head-eval counts, freq-control override") {
  Rng rng(39);
  const ModelConfig cfg = tiny_config(3, 2, 8, 2, {2});
  const ModelParams params = init_params(cfg, 77);
  const FeatureMap img = random_map(3, 6, 6, rng, 0.0, 1.0);

  const ForwardResult res = forward(img, params, cfg, 2);
  CHECK(res.head_evals == 4);
  CHECK(res.output.channels() == 3);
  CHECK(res.output.height() == 12);
  CHECK(res.output.width() == 12);

  SUBCASE("identical calls are bitwise identical") {
    const ForwardResult again = forward(img, params, cfg, 2);
    CHECK(bitwise_equal(res.output, again.output));
  }

  SUBCASE("matches the straight-line composition of the primitives") {
    const RecursionState st0 = extract_features(img, params, cfg);
    const auto states = run_recursion(st0, params, 8);
    std::vector<FeatureMap> outs;
    for (int t = 2; t <= 8; t += 2) outs.push_back(upscale_head(states[t - 1].h, params, 2));
    CHECK(bitwise_equal(res.output, combine_outputs(outs, 8, 2)));
  }

  SUBCASE("freq-control override changes only the head schedule") {
    for (int r : {1, 2, 4, 8}) {
      const ForwardResult rres = forward(img, params, cfg, 2, r);
      CHECK(rres.head_evals == 8 / r);
    }
    // r = recursions: the combined output IS the last intermediate.
    const ForwardResult last_only = forward(img, params, cfg, 2, 8, true);
    REQUIRE(last_only.intermediates.size() == 1);
    CHECK(bitwise_equal(last_only.output, last_only.intermediates.back()));
    CHECK_THROWS_AS(forward(img, params, cfg, 2, 3), ConfigError);
    CHECK_THROWS_AS(forward(img, params, cfg, 2, 16), ConfigError);
  }

  SUBCASE("emit-intermediate returns one prediction per head eval") {
    const ForwardResult emit = forward(img, params, cfg, 2, 0, true);
    CHECK(emit.intermediates.size() == 4);
    CHECK(emit.feature_means.size() == 8);
    CHECK(emit.state_means.size() == 8);
    for (const auto& m : emit.feature_means) {
      CHECK(m.channels() == 1);
      CHECK(m.height() == 6);
    }
  }
}

TEST_CASE("forward_with_tape reproduces forward bitwise") {
  Rng rng(40);
  const ModelConfig cfg = tiny_config(3, 2, 4, 2, {3});
  const ModelParams params = init_params(cfg, 12);
  const FeatureMap img = random_map(3, 5, 5, rng, 0.0, 1.0);

  const ForwardResult res = forward(img, params, cfg, 3);
  const ForwardTape tape = forward_with_tape(img, params, cfg, 3);
  CHECK(bitwise_equal(tape.combined, res.output));
  CHECK(tape.steps.size() == 4);
  CHECK(tape.head_tapes.size() == 2);
  CHECK(tape.outputs.size() == 2);
}

TEST_CASE("backward matches central finite differences on a tiny model") {
  Rng rng(41);
  const ModelConfig cfg = tiny_config(2, 2, 3, 1, {2});
  ModelParams params = init_params(cfg, 19);
  const FeatureMap img = random_map(3, 6, 6, rng, 0.0, 1.0);

  // Offsets of +-0.5 keep the L1 loss locally linear around the base point.
  // The signs mostly alternate so finite-difference noise cancels, but one
  // slot in every 64 is flipped to leave each channel a nonzero sign sum;
  // perfectly balanced signs would cancel the head bias derivatives to zero.
  ForwardTape tape = forward_with_tape(img, params, cfg, 2);
  FeatureMap target = zeros_like(tape.combined);
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const bool minus = (i & 1) == 0 || (i % 64 == 1);
    target.array()[i] = tape.combined.array()[i] + (minus ? -0.5f : 0.5f);
  }

  const LossGrad lg = l1_loss(tape.combined, target);
  const ModelParams analytic = backward(tape, params, cfg, lg.grad);

  const auto loss = [&] {
    return l1_loss(forward(img, params, cfg, 2).output, target).loss;
  };

  auto prefs = tensor_refs(params);
  auto grefs = tensor_refs(analytic);
  REQUIRE(prefs.size() == grefs.size());
  for (std::size_t t = 0; t < prefs.size(); ++t) {
    ArrayX<float> fd = fd_gradient(*prefs[t].second, loss);
    CHECK_MESSAGE(rel_error(*grefs[t].second, fd) < 1e-2, prefs[t].first);
  }
}

TEST_CASE("shared-parameter gradients equal the unrolled untied-copy sum") {
  Rng rng(42);
  const ModelConfig cfg = tiny_config(2, 2, 3, 1, {2});
  const ModelParams params = init_params(cfg, 23);
  const FeatureMap img = random_map(3, 5, 5, rng, 0.0, 1.0);
  const FeatureMap target = random_map(3, 10, 10, rng, 0.0, 1.0);

  ForwardTape tape = forward_with_tape(img, params, cfg, 2);
  const LossGrad lg = l1_loss(tape.combined, target);
  const ModelParams shared = backward(tape, params, cfg, lg.grad);

  const untied::ReferenceGrads ref = untied::run(params, cfg, img, target, 2);
  CHECK(bitwise_equal(ref.combined, tape.combined));
  CHECK(ref.loss == doctest::Approx(lg.loss).epsilon(1e-12));

  for (int k = 0; k < 3; ++k) {
    CHECK(rel_error(shared.rrb_convs[k].weights, ref.copy_sum[k].weights) < 1e-3);
    CHECK(rel_error(shared.rrb_convs[k].bias, ref.copy_sum[k].bias) < 1e-3);
    // Copies genuinely differ from each other and from the shared total.
    CHECK(rel_error(ref.per_copy[0][k].weights, ref.copy_sum[k].weights) > 1e-3);
  }
  CHECK(rel_error(shared.init_conv.weights, ref.init_conv.weights) < 1e-3);
  CHECK(rel_error(shared.heads.at(2).to_rgb.weights, ref.head.to_rgb.weights) < 1e-3);
}
