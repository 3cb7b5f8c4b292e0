#include <gtest/gtest.h>

#include "scp/optimizer.hpp"

using namespace scp;

TEST(LrSchedule, DividesByFactorAtDecayEpochs) {
  LrSchedule s{0.1, {10, 15}, 10.0};
  EXPECT_DOUBLE_EQ(s.at(0), 0.1);
  EXPECT_DOUBLE_EQ(s.at(9), 0.1);
  EXPECT_DOUBLE_EQ(s.at(10), 0.1 / 10.0);
  EXPECT_DOUBLE_EQ(s.at(14), 0.1 / 10.0);
  EXPECT_DOUBLE_EQ(s.at(15), 0.1 / 10.0 / 10.0);
}

TEST(SgdNesterov, ZeroGradientOnlyWeightDecayMoves) {
  SgdNesterov opt(0.9, 1e-4);
  Tensor conv({1}, 2.0f), beta({1}, 2.0f);
  Tensor zero({1});
  std::vector<ParamSlot> slots{{&conv, &zero, ParamKind::conv_weight}, {&beta, &zero, ParamKind::bn_beta}};
  opt.step(slots, 0.1);
  EXPECT_EQ(beta[0], 2.0f);
  // g = wd*w = 2e-4; v = 2e-4; w -= 0.1 * (2e-4 + 0.9 * 2e-4)
  EXPECT_FLOAT_EQ(conv[0], static_cast<float>(2.0 - 0.1 * (2e-4 + 0.9 * 2e-4)));
}

TEST(SgdNesterov, TwoStepHandRecurrence) {
  // w0 = 1, wd = 0.1, mu = 0.5, lr = 0.2, gradients 0.3 then -0.4.
  // step 1: g = 0.3 + 0.1*1 = 0.4, v = 0.4, w = 1 - 0.2*(0.4 + 0.2) = 0.88
  // step 2: g = -0.4 + 0.088 = -0.312, v = 0.5*0.4 - 0.312 = -0.112,
  //         w = 0.88 - 0.2*(-0.312 - 0.056) = 0.9536
  SgdNesterov opt(0.5, 0.1);
  Tensor w({1}, 1.0f), g({1}, 0.3f);
  std::vector<ParamSlot> slots{{&w, &g, ParamKind::dense_weight}};
  opt.step(slots, 0.2);
  EXPECT_NEAR(w[0], 0.88, 1e-6);
  g[0] = -0.4f;
  opt.step(slots, 0.2);
  EXPECT_NEAR(w[0], 0.9536, 1e-6);
  EXPECT_NEAR(opt.velocities()[0][0], -0.112, 1e-6);
}

TEST(SgdNesterov, BiasAndBnSkipDecay) {
  EXPECT_TRUE(takes_weight_decay(ParamKind::conv_weight));
  EXPECT_TRUE(takes_weight_decay(ParamKind::dense_weight));
  EXPECT_FALSE(takes_weight_decay(ParamKind::dense_bias));
  EXPECT_FALSE(takes_weight_decay(ParamKind::bn_beta));
  EXPECT_FALSE(takes_weight_decay(ParamKind::bn_gamma));
}

TEST(SgdNesterov, VelocityShapesMatchParameters) {
  SgdNesterov opt;
  Tensor a({2, 3}), b({4}), ga({2, 3}, 1.0f), gb({4}, 1.0f);
  std::vector<ParamSlot> slots{{&a, &ga, ParamKind::conv_weight}, {&b, &gb, ParamKind::dense_bias}};
  opt.step(slots, 0.1);
  ASSERT_EQ(opt.velocities().size(), 2u);
  EXPECT_EQ(opt.velocities()[0].shape(), a.shape());
  EXPECT_EQ(opt.velocities()[1].shape(), b.shape());
}

TEST(SgdNesterov, RejectsNonPositiveRateAndShapeMismatch) {
  SgdNesterov opt;
  Tensor a({2}), ga({2});
  std::vector<ParamSlot> slots{{&a, &ga, ParamKind::conv_weight}};
  EXPECT_THROW(opt.step(slots, 0.0), std::invalid_argument);
  EXPECT_THROW(opt.step(slots, -1.0), std::invalid_argument);
  Tensor bad({3});
  std::vector<ParamSlot> mismatched{{&a, &bad, ParamKind::conv_weight}};
  EXPECT_THROW(opt.step(mismatched, 0.1), std::exception);
}
