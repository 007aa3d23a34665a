#include <gtest/gtest.h>

#include <cmath>

#include "xvfg/attention.hpp"
#include "xvfg/gradcheck.hpp"
#include "xvfg/ops.hpp"

using namespace xvfg;

TEST(Attention, ZeroModuleScalesByQuarter) {
  AttentionModule am = AttentionModule::zeros("am", 8, 4);
  Rng rng(1);
  const Tensor f = random_uniform(Shape{2, 8, 5, 5}, rng, -3.0, 3.0);
  Tape t;
  const Tensor out = am.refine(t, t.constant(f)).value();
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(out[i], 0.25 * f[i]);
  for (double v : am.channel_attention(t, t.constant(f)).value().data()) EXPECT_EQ(v, 0.5);
  for (double v : am.spatial_attention(t, t.constant(f)).value().data()) EXPECT_EQ(v, 0.5);
}

TEST(Attention, ZeroInputGivesZero) {
  Rng rng(2);
  AttentionModule am = AttentionModule::create("am", 4, 2, rng, 1.0);
  Tape t;
  for (double v : am.refine(t, t.constant(Tensor(Shape{1, 4, 3, 3}))).value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Attention, ConstantFeaturesMakeBothPoolingPathsEqual) {
  // Spatially constant F: avg pool == max pool, so Mc = sigmoid(2 MLP(v)).
  Rng rng(3);
  AttentionModule am = AttentionModule::create("am", 4, 2, rng, 0.7);
  Tensor f(Shape{1, 4, 3, 3});
  const double v[] = {0.3, -1.2, 0.8, 2.0};
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 9; ++i) f.at(0, c, i / 3, i % 3) = v[c];
  Tape t;
  const Tensor mc = am.channel_attention(t, t.constant(f)).value();
  for (int c = 0; c < 4; ++c) {
    double mlp = am.fc2_bias.value.at(0, c, 0, 0);
    for (int j = 0; j < 2; ++j) {
      double hidden = am.fc1_bias.value.at(0, j, 0, 0);
      for (int k = 0; k < 4; ++k) hidden += am.fc1_weight.value.at(j, k, 0, 0) * v[k];
      mlp += am.fc2_weight.value.at(c, j, 0, 0) * std::max(0.0, hidden);
    }
    EXPECT_NEAR(mc.at(0, c, 0, 0), 1.0 / (1.0 + std::exp(-2.0 * mlp)), 1e-14);
  }
}

TEST(Attention, SpatialDescriptorsArePermutationInvariant) {
  Rng rng(4);
  AttentionModule am = AttentionModule::create("am", 4, 2, rng, 0.5);
  const Tensor f = random_uniform(Shape{1, 4, 5, 5}, rng);
  Tensor shuffled(f.shape());
  const int perm[] = {2, 0, 3, 1};
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 25; ++i) shuffled.at(0, c, i / 5, i % 5) = f.at(0, perm[c], i / 5, i % 5);
  Tape t;
  EXPECT_LE(max_abs_diff(channel_mean(t.constant(f)).value(), channel_mean(t.constant(shuffled)).value()), 1e-15);
  EXPECT_EQ(max_abs_diff(channel_max(t.constant(f)).value(), channel_max(t.constant(shuffled)).value()), 0.0);
  EXPECT_LE(max_abs_diff(am.spatial_attention(t, t.constant(f)).value(),
                         am.spatial_attention(t, t.constant(shuffled)).value()),
            1e-15);
}

TEST(Attention, GatesStrictlyInsideUnitIntervalAndShrinkFeatures) {
  Rng rng(5);
  for (int k = 0; k < 20; ++k) {
    AttentionModule am = AttentionModule::create("am", 4, 2, rng, 1.0);
    const Tensor f = random_uniform(Shape{1, 4, 4, 4}, rng, -5.0, 5.0);
    Tape t;
    for (double g : am.channel_attention(t, t.constant(f)).value().data()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
    for (double g : am.spatial_attention(t, t.constant(f)).value().data()) {
      EXPECT_GT(g, 0.0);
      EXPECT_LT(g, 1.0);
    }
    const Tensor out = am.refine(t, t.constant(f)).value();
    for (std::size_t i = 0; i < f.size(); ++i) EXPECT_LE(std::abs(out[i]), std::abs(f[i]));
  }
}

TEST(Attention, ParameterCountFormula) {
  Rng rng(6);
  for (auto [c, r] : {std::pair{8, 4}, std::pair{64, 4}, std::pair{16, 2}}) {
    AttentionModule am = AttentionModule::create("am", c, r, rng);
    const std::size_t hidden = static_cast<std::size_t>(c / r);
    const std::size_t expect = hidden * c + hidden + c * hidden + c + 2 * 7 * 7 + 1;
    EXPECT_EQ(am.parameter_count(), expect);
  }
  EXPECT_THROW(AttentionModule::create("am", 6, 4, rng), std::invalid_argument);
}

TEST(Attention, GradcheckModulePasses) {
  for (const auto& r : run_gradcheck("attention", 3)) EXPECT_TRUE(r.passed) << r.op << " " << r.max_rel_error;
}
