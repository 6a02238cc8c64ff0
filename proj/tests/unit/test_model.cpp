#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "moes/error.hpp"
#include "moes/grad_check.hpp"
#include "moes/model.hpp"
#include "moes/ops.hpp"

namespace moes {
namespace {

using testing::random_tensor;

ModelConfig tiny() {
  ModelConfig c;
  c.input_h = 8;
  c.input_w = 8;
  c.trunk_stages = {{{2}, ops::PoolSpec{2, 2, false}}, {{3}, ops::PoolSpec{2, 1, true}}, {{3}, std::nullopt}};
  c.concat_stages = {0, 1, 2};
  c.num_experts = 3;
  c.expert_conv1_filters = 2;
  c.expert_conv2_filters = 1;
  c.gating_downsample = 2;
  c.gating_conv_filters = {2};
  c.gating_pool = ops::PoolSpec{2, 2, false};
  c.gating_dense_units = {4};
  c.cb_h = 2;
  c.cb_w = 2;
  return c;
}

TEST(ModelConfig, PresetsValidateAndHaveExpectedShapes) {
  const auto desk = ModelConfig::desk_scale();
  EXPECT_NO_THROW(desk.validate());
  EXPECT_EQ(desk.output_h(), 16u);
  EXPECT_EQ(desk.output_w(), 16u);
  const auto paper = ModelConfig::paper_scale();
  EXPECT_NO_THROW(paper.validate());
  EXPECT_EQ(paper.num_experts, 20u);
  EXPECT_EQ(paper.gating_input_h(), 120u);
  EXPECT_EQ(paper.gating_input_w(), 160u);
  EXPECT_EQ(paper.output_h(), 60u);
  EXPECT_EQ(paper.output_w(), 80u);
}

TEST(ModelConfig, InvalidValuesRejected) {
  auto c = tiny();
  c.alpha = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.tau = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.lambda_cb = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.concat_stages = {7};
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny();
  c.input_h = 2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ModelConfig, JsonRoundTripAndStrictKeys) {
  const auto paper = ModelConfig::paper_scale();
  EXPECT_EQ(model_config_from_json(to_json(paper)), paper);
  EXPECT_EQ(model_config_from_json(nlohmann::json{{"preset", "paper"}}), paper);
  EXPECT_EQ(model_config_from_json(nlohmann::json::object()), ModelConfig::desk_scale());
  EXPECT_THROW(model_config_from_json(nlohmann::json{{"taux", 3}}), ConfigError);
  EXPECT_THROW(model_config_from_json(nlohmann::json{{"preset", "huge"}}), ConfigError);
  EXPECT_THROW(model_config_from_json(nlohmann::json{{"tau", "hot"}}), ConfigError);
  EXPECT_EQ(canonical_json(paper), canonical_json(model_config_from_json(to_json(paper))));
}

TEST(ModelConfig, DefaultLossWeightsAndTemperature) {
  const ModelConfig c;
  EXPECT_EQ(c.lambda_c, 1.0);
  EXPECT_EQ(c.lambda_s, 10.0);
  EXPECT_EQ(c.lambda_cb, 1.0);
  EXPECT_EQ(c.alpha, 1.1);
  EXPECT_EQ(c.tau, 10.0);
}

TEST(Census, FullScalePresetMatchesGoldenFile) {
  std::ifstream is(std::string(MOES_SOURCE_DIR) + "/tests/golden/paper_census.json");
  ASSERT_TRUE(is);
  const auto golden = nlohmann::json::parse(is);
  EXPECT_EQ(census_to_json(layer_census(ModelConfig::paper_scale())), golden);
}

TEST(Model, OutputShapesAndMixtureIdentity) {
  Model m(tiny(), 3);
  const Tensor x = random_tensor({2, 3, 8, 8}, 4, 0, 1);
  const auto o = m.forward(x);
  EXPECT_EQ(o.saliency->value.shape(), (Shape{2, 1, 4, 4}));
  EXPECT_EQ(o.expert_maps->value.shape(), (Shape{2, 3, 4, 4}));
  EXPECT_EQ(o.gate_probs_tau->value.shape(), (Shape{2, 3}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 16; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) {
        s += o.gate_probs_tau->value[n * 3 + k] * o.biased_expert_maps->value[(n * 3 + k) * 16 + i];
      }
      EXPECT_NEAR(o.saliency->value[n * 16 + i], s, 1e-10);
    }
  for (std::size_t n = 0; n < 2; ++n) {
    double s1 = 0.0, st = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      s1 += o.gate_probs_1->value[n * 3 + k];
      st += o.gate_probs_tau->value[n * 3 + k];
    }
    EXPECT_NEAR(s1, 1.0, 1e-12);
    EXPECT_NEAR(st, 1.0, 1e-12);
  }
}

TEST(Model, MixtureIsConvexInTheExperts) {
  Model m(tiny(), 31);
  const auto o = m.forward(random_tensor({3, 3, 8, 8}, 32, 0, 1));
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 16; ++i) {
      double lo = 1e300, hi = -1e300;
      for (std::size_t k = 0; k < 3; ++k) {
        const double v = o.biased_expert_maps->value[(n * 3 + k) * 16 + i];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      const double s = o.saliency->value[n * 16 + i];
      EXPECT_GE(s, lo - 1e-12);
      EXPECT_LE(s, hi + 1e-12);
    }
}

TEST(Model, TrunkIsSharedAndHeadsAreSeparate) {
  Model m(tiny(), 33);
  const Tensor x = random_tensor({1, 3, 8, 8}, 34, 0, 1);
  const Tensor base = m.forward(x).expert_maps->value;
  auto changed_experts = [&](const std::string& name) {
    const Var p = m.graph().find_parameter(name);
    const Tensor saved = p->value;
    for (double& v : p->value.values()) v += 0.3;
    m.graph().clear_tape();
    const Tensor after = m.forward(x).expert_maps->value;
    p->value = saved;
    std::vector<bool> changed(3, false);
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < 16; ++i) changed[k] = changed[k] || after[k * 16 + i] != base[k * 16 + i];
    return changed;
  };
  EXPECT_EQ(changed_experts("trunk.conv1_1.bias"), (std::vector<bool>{true, true, true}));
  const auto head = changed_experts("expert1.conv_e2.bias");
  EXPECT_EQ(head, (std::vector<bool>{false, true, false}));
}

TEST(Model, WrongInputShapeIsUsageError) {
  Model m(tiny(), 3);
  EXPECT_THROW(m.forward(Tensor({1, 3, 8, 6})), UsageError);
  EXPECT_THROW(m.forward(Tensor({1, 1, 8, 8})), UsageError);
}

TEST(Model, CenterBiasNeutralAtInit) {
  Model m(ModelConfig::desk_scale(), 9);
  const Tensor x = random_tensor({2, 3, 64, 64}, 5, 0, 1);
  const Tensor a = m.forward(x).saliency->value;
  m.graph().clear_tape();
  ForwardOptions bypass;
  bypass.bypass_center_bias = true;
  const Tensor b = m.forward(x, bypass).saliency->value;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Model, LowTemperatureSelectsArgmaxExpert) {
  auto c = tiny();
  c.tau = 1e-3;
  Model m(c, 11);
  // Spread the final gating logits so the argmax is unambiguous.
  for (const auto& p : m.graph().parameters()) {
    if (p->name.rfind("gating.full", 0) == 0 && p->name.find(".bias") != std::string::npos &&
        p->value.size() == 3) {
      p->value = Tensor({3}, std::vector<double>{0.0, 1.0, -1.0});
    }
  }
  const auto o = m.forward(random_tensor({2, 3, 8, 8}, 6, 0, 1));
  for (std::size_t n = 0; n < 2; ++n) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (o.gate_logits->value[n * 3 + k] > o.gate_logits->value[n * 3 + best]) best = k;
    }
    for (std::size_t i = 0; i < 16; ++i) {
      EXPECT_NEAR(o.saliency->value[n * 16 + i], o.biased_expert_maps->value[(n * 3 + best) * 16 + i], 1e-6);
    }
  }
}

TEST(Model, HighTemperatureGatesAreUniform) {
  auto c = tiny();
  c.tau = 1e9;
  Model m(c, 12);
  const auto o = m.forward(random_tensor({1, 3, 8, 8}, 7, 0, 1));
  for (double v : o.gate_probs_tau->value.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-8);
}

TEST(Model, FullLossGradientsMatchFiniteDifferences) {
  auto c = tiny();
  Model m(c, 13);
  for (const auto& p : m.graph().parameters()) {
    if (p->name == "center_bias") p->value = random_tensor(p->value.shape(), 14, 0.5, 1.5);
  }
  const Tensor x = random_tensor({2, 3, 8, 8}, 15, 0, 1);
  const Tensor y = random_tensor({2, 1, 4, 4}, 16, 0, 1);
  Tensor t({2, 3}, 0.0);
  t[0] = t[3 + 2] = 1.0;
  const auto report = grad_check(m.graph(), [&](Graph& g) { return total_loss(g, m.forward(x), y, t, c); });
  EXPECT_LE(report.max_rel_error, 1e-3);
  EXPECT_TRUE(report.passed());
}

TEST(Model, GradientFaultIsDetected) {
  auto c = tiny();
  Model m(c, 13);
  m.set_gradient_fault(1.5);
  const Tensor x = random_tensor({1, 3, 8, 8}, 15, 0, 1);
  const Tensor y = random_tensor({1, 1, 4, 4}, 16, 0, 1);
  Tensor t({1, 3}, 0.0);
  t[1] = 1.0;
  const auto report = grad_check(m.graph(), [&](Graph& g) { return total_loss(g, m.forward(x), y, t, c); });
  EXPECT_FALSE(report.passed());
}

TEST(Model, ClassLossSkippedWithoutWeight) {
  auto c = tiny();
  c.num_experts = 1;
  c.lambda_c = 0.0;
  Model m(c, 17);
  const Tensor x = random_tensor({2, 3, 8, 8}, 18, 0, 1);
  const Tensor y = random_tensor({2, 1, 4, 4}, 19, 0, 1);
  const auto o = m.forward(x);
  for (double v : o.gate_probs_tau->value.values()) EXPECT_EQ(v, 1.0);
  const double total = total_loss(m.graph(), o, y, Tensor({2, 1}, 1.0), c)->value[0];
  const double sal = saliency_loss(m.graph(), o, y, c)->value[0];
  EXPECT_NEAR(total, c.lambda_s * sal, 1e-12);
}

TEST(Model, ParametersAreGlorotBoundedAndSeeded) {
  Model a(tiny(), 21), b(tiny(), 21), d(tiny(), 22);
  EXPECT_EQ(a.graph().flat_parameters(), b.graph().flat_parameters());
  EXPECT_NE(a.graph().flat_parameters(), d.graph().flat_parameters());
  const Var k = a.graph().find_parameter("trunk.conv1_1.kernel");
  ASSERT_TRUE(k);
  const double limit = std::sqrt(6.0 / (3.0 * 9.0 + 2.0 * 9.0));
  for (double v : k->value.values()) EXPECT_LE(std::abs(v), limit);
  for (double v : a.graph().find_parameter("center_bias")->value.values()) EXPECT_EQ(v, 1.0);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  testing::TempDir dir("ckpt");
  Model m(tiny(), 23);
  save_checkpoint(dir / "m.best", m);
  Model back = load_checkpoint(dir / "m.best");
  EXPECT_EQ(back.config(), m.config());
  EXPECT_EQ(back.graph().flat_parameters(), m.graph().flat_parameters());

  std::fstream f(dir / "m.best", std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(20);
  f.put('#');
  f.close();
  EXPECT_THROW(load_checkpoint(dir / "m.best"), FormatError);

  std::ofstream(dir / "junk.best", std::ios::binary) << "NOPE";
  EXPECT_THROW(load_checkpoint(dir / "junk.best"), FormatError);
}

TEST(Checkpoint, ClampForExport) {
  const Tensor t({1, 1, 1, 3}, std::vector<double>{-1, 0, 2});
  const Tensor c = clamp_for_export(t);
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[2], 2.0);
}

}  // namespace
}  // namespace moes
