#include <gtest/gtest.h>

#include <cmath>

#include "xvfg/dataset.hpp"
#include "xvfg/networks.hpp"
#include "xvfg/ops.hpp"
#include "xvfg/optim.hpp"

using namespace xvfg;

namespace {

// Position-weighted sum; sensitive to permutations as well as values.
double fingerprint(const Tensor& t) {
  double s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * (1.0 + static_cast<double>(i % 7) / 7.0);
  return s;
}

// Golden values recorded at first build; a relative tolerance absorbs
// summation-order differences between instruction sets.
constexpr double kGoldenTol = 1e-9;

void expect_golden(double got, double want) { EXPECT_LE(std::abs(got - want), kGoldenTol * std::abs(want)) << got; }

}  // namespace

TEST(Generator, ShapeContract) {
  Rng rng(1);
  GeneratorConfig c;
  c.in_channels = 6;
  Generator g = Generator::create("G", c, rng);
  Rng data(2);
  Tape t(false);
  const auto out = g.forward(t, t.constant(random_uniform(Shape{1, 6, 32, 32}, data)));
  EXPECT_EQ(out.image.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(out.feature.shape(), (Shape{1, 64, 32, 32}));
  for (double v : out.image.value().data()) {
    EXPECT_GE(v, -1.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(g.forward(t, t.constant(Tensor(Shape{1, 6, 36, 36}))), ShapeError);
  EXPECT_THROW(g.forward(t, t.constant(Tensor(Shape{1, 5, 32, 32}))), ShapeError);
}

TEST(Generator, GoldenFingerprint) {
  Rng rng(42);
  GeneratorConfig c;
  c.in_channels = 6;
  Generator g = Generator::create("G", c, rng);
  Rng data(1);
  Tape t(false);
  const auto out = g.forward(t, t.constant(random_uniform(Shape{1, 6, 32, 32}, data)));
  expect_golden(fingerprint(out.image.value()), 10.521398319032201);
  expect_golden(fingerprint(out.feature.value()), 36950.938955487029);
}

TEST(CrossViewNet, StageShapesAndSharedSemanticGenerator) {
  ModelConfig mc;
  mc.base_channels = 8;
  mc.feature_channels = 16;
  CrossViewNet net = CrossViewNet::create(mc, 3);
  const auto s = gen_toy_pair(1, 64);
  Tape t(false);
  const auto f = net.forward(t, t.constant(s.aerial), t.constant(semantic_planes(s.ground_semantic)));
  for (const Var* v : {&f.stage1.image, &f.stage2.image}) EXPECT_EQ(v->shape(), (Shape{1, 3, 64, 64}));
  for (const Var* v : {&f.stage1.semantic, &f.stage2.semantic}) EXPECT_EQ(v->shape(), (Shape{1, 4, 64, 64}));
  EXPECT_EQ(f.stage1.image_feature.shape().c, 16);
  EXPECT_EQ(f.stage1.semantic_feature.shape().c, 16);
  EXPECT_EQ(net.gi().config().in_channels, 3 + 4);
  EXPECT_EQ(net.ga().config().in_channels, 3 + 3 + 2 * 16);
  EXPECT_EQ(net.gs().config().in_channels, 3);

  // Gs is one object used by both stages.
  Tape t2;
  Generator& gs = net.gs();
  const auto s1 = stage1(t2, net.gi(), gs, t2.constant(s.aerial), t2.constant(semantic_planes(s.ground_semantic)));
  const auto s2 = stage2(t2, net.ga(), gs, net.am_image(), net.am_semantic(), t2.constant(s.aerial), s1.image,
                         s1.image_feature, s1.semantic_feature);
  for (Parameter* p : gs.parameters()) p->zero_grad();
  t2.backward(sum(s1.semantic) + sum(s2.semantic));
  double gs_grad_mass = 0;
  for (Parameter* p : gs.parameters())
    for (double g : p->grad.data()) gs_grad_mass += std::abs(g);
  EXPECT_GT(gs_grad_mass, 0.0);
  EXPECT_EQ(&net.gs(), &gs);
}

TEST(CrossViewNet, AttentionOffPassesFeaturesThrough) {
  ModelConfig mc;
  mc.base_channels = 8;
  mc.feature_channels = 16;
  mc.toggles = {false, false, false};
  CrossViewNet net = CrossViewNet::create(mc, 4);
  EXPECT_EQ(net.am_image(), nullptr);
  EXPECT_EQ(net.d2(), nullptr);
  const auto s = gen_toy_pair(2, 32);
  Tape t(false);
  const auto f = net.forward(t, t.constant(s.aerial), t.constant(semantic_planes(s.ground_semantic)));
  EXPECT_EQ(max_abs_diff(f.stage2.refined_image_feature.value(), f.stage1.image_feature.value()), 0.0);
  EXPECT_EQ(max_abs_diff(f.stage2.refined_semantic_feature.value(), f.stage1.semantic_feature.value()), 0.0);
}

TEST(CrossViewNet, GoldenRefinedImage) {
  CrossViewNet net = CrossViewNet::create(ModelConfig{}, 42);
  const auto s = gen_toy_pair(5, 32);
  Tape t(false);
  const auto f = net.forward(t, t.constant(s.aerial), t.constant(semantic_planes(s.ground_semantic)));
  expect_golden(fingerprint(f.stage2.image.value()), 207.41407196011116);
  expect_golden(fingerprint(f.stage1.image.value()), -121.271909532584);
}

TEST(CrossViewNet, SameSeedSameWeights) {
  CrossViewNet a = CrossViewNet::create(ModelConfig{}, 9);
  CrossViewNet b = CrossViewNet::create(ModelConfig{}, 9);
  const auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(max_abs_diff(pa[i]->value, pb[i]->value), 0.0);
  }
}

TEST(CrossViewNet, AblationParameterDeltas) {
  ModelConfig mc;
  std::size_t counts[4];
  std::size_t am = 0, offsets = 0, d2 = 0;
  const Toggles toggles[4] = {{false, false, false}, {true, false, false}, {true, true, false}, {true, true, true}};
  for (int i = 0; i < 4; ++i) {
    mc.toggles = toggles[i];
    CrossViewNet net = CrossViewNet::create(mc, 1);
    counts[i] = net.parameter_count();
    if (i == 3) {
      am = net.am_image()->parameter_count() + net.am_semantic()->parameter_count();
      offsets = count_parameters(net.gi().offset_parameters()) + count_parameters(net.gs().offset_parameters()) +
                count_parameters(net.ga().offset_parameters());
      d2 = net.d2()->parameter_count();
    }
  }
  // Independent arithmetic: attention = 2 x (2 C^2/r + C/r + C + 2*49 + 1)
  const std::size_t c = 64, hidden = 16;
  EXPECT_EQ(am, 2 * (2 * c * hidden + hidden + c + 98 + 1));
  // Offset predictor on each first-encoder 3x3 conv: 18 x Cin x 9 + 18.
  EXPECT_EQ(offsets, (18u * 7 * 9 + 18) + (18u * 3 * 9 + 18) + (18u * (3 + 3 + 2 * 64) * 9 + 18));
  EXPECT_EQ(counts[1] - counts[0], am);
  EXPECT_EQ(counts[2] - counts[1], offsets);
  EXPECT_EQ(counts[3] - counts[2], d2);
}

TEST(Discriminator, PatchMapShapeAndRange) {
  Rng rng(5);
  DiscriminatorConfig c;
  Discriminator d = Discriminator::create("D", c, rng);
  Tape t(false);
  const Var p = d.forward(t, t.constant(random_uniform(Shape{2, 3, 64, 64}, rng)),
                          t.constant(random_uniform(Shape{2, 3, 64, 64}, rng)));
  EXPECT_EQ(p.shape(), (Shape{2, 1, 8, 8}));
  for (double v : p.value().data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  c.zero_final = true;
  Discriminator z = Discriminator::create("Z", c, rng);
  for (double v : z.forward(t, t.constant(Tensor(Shape{1, 3, 32, 32})), t.constant(Tensor(Shape{1, 3, 32, 32})))
                      .value()
                      .data())
    EXPECT_EQ(v, 0.5);
}

TEST(Adam, ZeroGradientKeepsParametersButCountsStep) {
  Parameter p("p", Tensor(Shape{1, 1, 1, 3}, {1.0, -2.0, 3.0}));
  Adam opt({&p}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  opt.step();
  EXPECT_EQ(opt.steps(), 1);
  EXPECT_EQ(p.value[0], 1.0);
  EXPECT_EQ(p.value[2], 3.0);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  Parameter p("p", Tensor(Shape{1, 1, 1, 3}, {0.0, 0.0, 0.0}));
  p.grad = Tensor(Shape{1, 1, 1, 3}, {0.3, -5.0, 1e-3});
  Adam opt({&p}, AdamConfig{0.01, 0.9, 0.999, 1e-8});
  opt.step();
  EXPECT_NEAR(p.value[0], -0.01, 1e-9);
  EXPECT_NEAR(p.value[1], 0.01, 1e-9);
  EXPECT_NEAR(p.value[2], -0.01, 1e-7);
}

TEST(Adam, QuadraticBowlConverges) {
  Parameter w("w", Tensor(Shape{1, 1, 1, 4}, 1.0));
  Adam opt({&w}, AdamConfig{0.1, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 100; ++i) {
    opt.zero_grad();
    Tape t;
    const Var v = t.param(w);
    t.backward(sum(mul(v, v)));
    opt.step();
  }
  double norm = 0;
  for (double v : w.value.data()) norm += v * v;
  EXPECT_LT(std::sqrt(norm), 0.05);

  // Scalar re-simulation of the same recurrence.
  double x = 1.0, m = 0, s = 0;
  for (int k = 1; k <= 100; ++k) {
    const double g = 2 * x;
    m = 0.9 * m + 0.1 * g;
    s = 0.999 * s + 0.001 * g * g;
    x -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(s / (1 - std::pow(0.999, k))) + 1e-8);
  }
  EXPECT_NEAR(w.value[0], x, 1e-12);
}
