#include <gtest/gtest.h>

#include <cmath>

#include "xvfg/gradcheck.hpp"
#include "xvfg/ops.hpp"

using namespace xvfg;

TEST(Gradcheck, RelativeErrorFloor) {
  EXPECT_EQ(gradcheck_relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(gradcheck_relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gradcheck_relative_error(1e-6, 0.0), 1e-3);
}

TEST(Gradcheck, EveryModulePasses) {
  for (const auto& m : gradcheck_modules()) {
    const auto results = run_gradcheck(m, 11);
    EXPECT_FALSE(results.empty()) << m;
    for (const auto& r : results) {
      EXPECT_EQ(r.module, m);
      EXPECT_TRUE(r.passed) << m << "/" << r.op << " " << r.max_rel_error;
      EXPECT_LE(r.max_rel_error, kGradcheckTolerance);
    }
  }
}

TEST(Gradcheck, UnknownModuleThrows) { EXPECT_THROW(run_gradcheck("nope", 1), std::invalid_argument); }

TEST(Gradcheck, FaultyRuleIsCaught) {
  const GradcheckResult r = run_faulty_fixture(3);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.op, "faulty_square");
  EXPECT_GT(r.max_rel_error, 0.1);
  EXPECT_FALSE(r.worst_tensor.empty());
}

TEST(Gradcheck, ReportsWorstElement) {
  // d/dx sum(faulty(x)) is x instead of 2x: worst element has the largest |x|.
  Parameter x("x", Tensor(Shape{1, 1, 1, 3}, {0.2, -0.9, 0.5}));
  const auto r = check_gradients("t", "faulty", {&x}, [&](Tape& t) { return sum(faulty_square(t.param(x))); });
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.worst_tensor, "x");
  EXPECT_NEAR(r.max_rel_error, 0.5, 1e-6);
  EXPECT_NEAR(r.numeric, 2 * x.value[r.worst_index], 1e-6);
}
