#include <gtest/gtest.h>

#include <cmath>

#include "xvfg/deform.hpp"
#include "xvfg/gradcheck.hpp"
#include "xvfg/ops.hpp"

using namespace xvfg;

namespace {

// Reference bilinear read with zero outside the map.
double bilinear_oracle(const Tensor& m, int c, double y, double x) {
  auto px = [&](int i, int j) {
    if (i < 0 || i >= m.h() || j < 0 || j >= m.w()) return 0.0;
    return m.at(0, c, i, j);
  };
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double dy = y - y0, dx = x - x0;
  return (1 - dy) * (1 - dx) * px(y0, x0) + (1 - dy) * dx * px(y0, x0 + 1) + dy * (1 - dx) * px(y0 + 1, x0) +
         dy * dx * px(y0 + 1, x0 + 1);
}

// Deformable convolution evaluated tap by tap with the bilinear oracle.
Tensor deform_oracle(const Tensor& x, const Tensor& off, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int k = w.h();
  const int ho = off.h(), wo = off.w();
  Tensor out(Shape{1, w.n(), ho, wo});
  for (int co = 0; co < w.n(); ++co)
    for (int i = 0; i < ho; ++i)
      for (int j = 0; j < wo; ++j) {
        double acc = b.at(0, co, 0, 0);
        for (int ki = 0; ki < k; ++ki)
          for (int kj = 0; kj < k; ++kj) {
            const int tap = ki * k + kj;
            const double y = i * stride - pad + ki + off.at(0, 2 * tap, i, j);
            const double xx = j * stride - pad + kj + off.at(0, 2 * tap + 1, i, j);
            for (int ci = 0; ci < x.c(); ++ci) acc += w.at(co, ci, ki, kj) * bilinear_oracle(x, ci, y, xx);
          }
        out.at(0, co, i, j) = acc;
      }
  return out;
}

}  // namespace

TEST(Bilinear, IntegerCoordinatesReadPixels) {
  Rng rng(1);
  const Tensor m = random_uniform(Shape{1, 2, 4, 5}, rng);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 5; ++x) {
      const auto s = bilinear_sample(m, y, x);
      EXPECT_EQ(s.value[0], m.at(0, 0, y, x));
      EXPECT_EQ(s.value[1], m.at(0, 1, y, x));
    }
}

TEST(Bilinear, CentreOfFourNeighbours) {
  const Tensor m(Shape{1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  EXPECT_DOUBLE_EQ(bilinear_sample(m, 0.5, 0.5).value[0], 1.5);
}

TEST(Bilinear, MatchesOracleIncludingBorder) {
  Rng rng(2);
  const Tensor m = random_uniform(Shape{1, 3, 5, 6}, rng);
  for (int k = 0; k < 200; ++k) {
    const double y = rng.uniform(-1.5, 5.5), x = rng.uniform(-1.5, 6.5);
    const auto s = bilinear_sample(m, y, x);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(s.value[static_cast<std::size_t>(c)], bilinear_oracle(m, c, y, x), 1e-14);
  }
}

TEST(Bilinear, CoordinateDerivativesMatchFiniteDifference) {
  Rng rng(3);
  const Tensor m = random_uniform(Shape{1, 2, 5, 5}, rng);
  const double h = 1e-7;
  for (int k = 0; k < 100; ++k) {
    const double y = rng.uniform(0.05, 3.95), x = rng.uniform(0.05, 3.95);
    const auto s = bilinear_sample(m, y, x);
    for (int c = 0; c < 2; ++c) {
      const double fy = (bilinear_oracle(m, c, y + h, x) - bilinear_oracle(m, c, y - h, x)) / (2 * h);
      const double fx = (bilinear_oracle(m, c, y, x + h) - bilinear_oracle(m, c, y, x - h)) / (2 * h);
      // Skip points whose FD stencil straddles a cell boundary (derivative jumps there).
      if (std::floor(y + h) != std::floor(y - h) || std::floor(x + h) != std::floor(x - h)) continue;
      const auto ci = static_cast<std::size_t>(c);
      EXPECT_LE(std::abs(s.d_dy[ci] - fy) / std::max({std::abs(fy), std::abs(s.d_dy[ci]), 1e-3}), 1e-6);
      EXPECT_LE(std::abs(s.d_dx[ci] - fx) / std::max({std::abs(fx), std::abs(s.d_dx[ci]), 1e-3}), 1e-6);
    }
  }
}

TEST(DeformConv, MatchesTapOracleWithRandomOffsets) {
  Rng rng(4);
  const Tensor x = random_uniform(Shape{1, 3, 7, 7}, rng);
  const Tensor w = random_normal(Shape{2, 3, 3, 3}, rng);
  const Tensor b = random_normal(Shape{1, 2, 1, 1}, rng);
  for (int stride : {1, 2}) {
    const int out = (7 + 2 - 3) / stride + 1;
    const Tensor off = random_uniform(Shape{1, 18, out, out}, rng, -2.0, 2.0);
    Tape t;
    const Var y = deform_conv2d(t.constant(x), t.constant(off), t.constant(w), t.constant(b), stride, 1);
    EXPECT_LE(max_abs_diff(y.value(), deform_oracle(x, off, w, b, stride, 1)), 1e-12);
  }
}

TEST(DeformConv, ZeroOffsetsEqualConv2d) {
  Rng rng(5);
  for (int k = 0; k < 5; ++k) {
    DeformConvLayer layer = DeformConvLayer::create("dc", 3, 4, 3, 1, 1, rng, 0.5);
    const Tensor x = random_uniform(Shape{2, 3, 6, 6}, rng);
    Tape t;
    const Var d = layer.forward(t, t.constant(x));
    const Var c = conv2d(t.constant(x), t.param(layer.weight), t.param(layer.bias), 1, 1);
    EXPECT_LE(max_abs_diff(d.value(), c.value()), 1e-12);
  }
}

TEST(DeformConv, ConstantHalfOffsetReducesToBilinear) {
  const Tensor m(Shape{1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
  const Tensor off(Shape{1, 2, 2, 2}, 0.5);
  Tape t;
  const double w = 1.7;
  const Var y = deform_conv2d(t.constant(m), t.constant(off), t.constant(Tensor(Shape{1, 1, 1, 1}, w)),
                              t.constant(Tensor(Shape{1, 1, 1, 1})), 1, 0);
  EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_DOUBLE_EQ(y.value().at(0, 0, 0, 0), 1.5 * w);
}

TEST(DeformConv, IntegerOffsetShiftsInput) {
  // Offset (0, +1) on every tap of a 1x1 kernel reads the right neighbour.
  Rng rng(6);
  const Tensor x = random_uniform(Shape{1, 1, 4, 4}, rng);
  Tensor off(Shape{1, 2, 4, 4});
  for (int i = 0; i < 16; ++i) off[static_cast<std::size_t>(16 + i)] = 1.0;
  Tape t;
  const Var y = deform_conv2d(t.constant(x), t.constant(off), t.constant(Tensor::ones(Shape{1, 1, 1, 1})),
                              t.constant(Tensor(Shape{1, 1, 1, 1})), 1, 0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(y.value().at(0, 0, i, j), j + 1 < 4 ? x.at(0, 0, i, j + 1) : 0.0);
}

TEST(DeformConv, OffsetShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(deform_conv2d(t.constant(Tensor(Shape{1, 1, 4, 4})), t.constant(Tensor(Shape{1, 4, 4, 4})),
                             t.constant(Tensor(Shape{1, 1, 3, 3})), t.constant(Tensor(Shape{1, 1, 1, 1})), 1, 1),
               ShapeError);
}

TEST(DeformConv, LayerStartsWithZeroPredictor) {
  Rng rng(7);
  DeformConvLayer layer = DeformConvLayer::create("dc", 2, 3, 3, 1, 1, rng);
  for (Parameter* p : layer.offset_parameters())
    for (double v : p->value.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(layer.offset_weight.value.shape(), (Shape{18, 2, 3, 3}));
}

TEST(DeformConv, FullParameterGradcheck) {
  Rng rng(8);
  DeformConvLayer layer = DeformConvLayer::create("dc", 2, 3, 3, 1, 1, rng, 0.5);
  layer.offset_weight.value = random_normal(layer.offset_weight.value.shape(), rng, 0.3);
  Parameter x("x", random_uniform(Shape{1, 2, 6, 6}, rng));
  const Tensor proj = random_uniform(Shape{1, 3, 6, 6}, rng);
  std::vector<Parameter*> inputs = layer.parameters();
  inputs.push_back(&x);
  const auto r = check_gradients("deform", "layer", inputs, [&](Tape& t) {
    return sum(mul(layer.forward(t, t.param(x)), t.constant(proj)));
  });
  EXPECT_TRUE(r.passed) << r.worst_tensor << "[" << r.worst_index << "] " << r.max_rel_error;
}
