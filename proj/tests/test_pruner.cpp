#include <gtest/gtest.h>

#include "scp/pruner.hpp"
#include "scp/trainer.hpp"
#include "test_util.hpp"

using namespace scp;
using testkit::random_tensor;

namespace {

Model tiny_conv_bn() {
  // conv3x3 1->2 (no bias) + BN + ReLU + flatten + dense(2*4*4 -> 3)
  Model m;
  m.architecture = "test";
  m.input_shape = {1, 6, 6};
  m.num_classes = 3;
  m.layers.emplace_back(Conv2dLayer<float>{Tensor({2, 1, 3, 3}, 1.0f), 1, 0});
  m.layers.emplace_back(BatchNormLayer<float>{Tensor({2}), Tensor({2}, 1.0f), {0, 0}, {1, 1}});
  m.layers.emplace_back(ReluLayer{});
  m.layers.emplace_back(FlattenLayer{});
  m.layers.emplace_back(DenseLayer<float>{Tensor({3, 32}), Tensor({3})});
  m.validate();
  return m;
}

// Random BN state with a mix of clearly kept and clearly pruned channels.
void randomize(Model& m, Rng& rng, double prune_fraction) {
  for (auto i : m.bn_layer_indices()) {
    auto& bn = std::get<BatchNormLayer<float>>(m.layers[i]);
    for (std::size_t c = 0; c < bn.channels(); ++c) {
      const bool prune = rng.uniform() < prune_fraction;
      bn.beta[c] = static_cast<float>(prune ? -1.0 - rng.uniform() : 0.5 + rng.uniform());
      bn.gamma[c] = static_cast<float>((rng.uniform() < 0.5 ? -1 : 1) * (0.2 + 0.8 * rng.uniform()));
      bn.running_mean[c] = static_cast<float>(0.3 * rng.normal());
      bn.running_var[c] = static_cast<float>(0.5 + rng.uniform());
    }
  }
}

}  // namespace

TEST(CountParams, HandCounts) {
  EXPECT_EQ(count_params(tiny_conv_bn()), 18u + 4 + 3 * 32 + 3);
  Model dense_only;
  dense_only.input_shape = {10, 1, 1};
  dense_only.num_classes = 5;
  dense_only.layers.emplace_back(FlattenLayer{});
  dense_only.layers.emplace_back(DenseLayer<float>{Tensor({5, 10}), Tensor({5})});
  EXPECT_EQ(count_params(dense_only), 55u);
  EXPECT_EQ(count_flops(dense_only, {10, 1, 1}), 100u);
}

TEST(CountFlops, ConvHandCount) {
  // 3x3 conv 1->2 on 6x6, no padding: 4x4 output -> 2 * (4*4*2*1*9) = 576.
  const auto m = tiny_conv_bn();
  EXPECT_EQ(count_flops(m, {1, 6, 6}), 576u + 2 * 32 * 3);
}

TEST(CountFlops, ConvNetSHandCount) {
  Rng rng(1);
  const auto m = make_convnet_s({1, 28, 28}, 10, rng);
  const std::uint64_t conv1 = 2ull * 28 * 28 * 16 * 1 * 9;
  const std::uint64_t conv2 = 2ull * 14 * 14 * 16 * 16 * 9;
  const std::uint64_t conv3 = 2ull * 7 * 7 * 16 * 16 * 9;
  const std::uint64_t fc = 2ull * (16 * 3 * 3) * 10;
  EXPECT_EQ(count_flops(m, {1, 28, 28}), conv1 + conv2 + conv3 + fc);
  EXPECT_EQ(count_params(m), 1u * 16 * 9 + 2u * 16 * 16 * 9 + 3u * 2 * 16 + 144u * 10 + 10);
}

TEST(CountFlops, HalvingChannelsCutsMiddleConvByThreeQuarters) {
  Rng rng(2);
  const auto full = make_convnet_s({1, 28, 28}, 10, rng);
  const auto half = make_convnet_s({1, 28, 28}, 10, rng, 8);
  const std::uint64_t mid_full = 2ull * 14 * 14 * 16 * 16 * 9, mid_half = 2ull * 14 * 14 * 8 * 8 * 9;
  EXPECT_EQ(mid_half * 4, mid_full);
  EXPECT_LT(count_flops(half, {1, 28, 28}), count_flops(full, {1, 28, 28}));
}

TEST(ExtractMasks, Cases) {
  auto m = tiny_conv_bn();
  auto& bn = std::get<BatchNormLayer<float>>(m.layers[1]);
  EXPECT_EQ(extract_masks(m).masks[0], (std::vector<int>{1, 1}));  // phi = 0.52 < 0.8
  bn.beta[0] = -3.0f;  // phi ~ 1
  EXPECT_EQ(extract_masks(m).masks[0], (std::vector<int>{0, 1}));
  bn.beta[1] = -2.0f;
  const auto all = extract_masks(m);
  EXPECT_EQ(all.masks[0], (std::vector<int>{0, 1}));  // keeps the lower-phi channel
  ASSERT_EQ(all.warnings.size(), 1u);
  Model no_bn;
  no_bn.input_shape = {4, 1, 1};
  no_bn.num_classes = 2;
  no_bn.layers = {FlattenLayer{}, DenseLayer<float>{Tensor({2, 4}), Tensor({2})}};
  EXPECT_THROW(extract_masks(no_bn), std::invalid_argument);
}

TEST(ExtractMasks, NoReluCriterionUsesIntervalProbability) {
  auto m = tiny_conv_bn();
  auto& bn = std::get<BatchNormLayer<float>>(m.layers[1]);
  bn.beta[0] = 0.0f;
  bn.gamma[0] = 0.01f;  // concentrated at zero
  bn.beta[1] = -3.0f;   // mostly negative, far from zero
  const MaskCriterion no_relu{MaskVariant::no_relu, 0.05};
  EXPECT_EQ(extract_masks(m, m.hyper, no_relu).masks[0], (std::vector<int>{0, 1}));
  // Under the ReLU criterion both channels sit below delta, so the fallback keeps one.
  EXPECT_EQ(extract_masks(m, m.hyper, {}).warnings.size(), 1u);
}

TEST(Surgery, AllOnesIsStructurallyIdenticalAndBitExact) {
  Rng rng(3);
  auto m = make_convnet_s({1, 28, 28}, 10, rng);
  randomize(m, rng, 0.0);
  const ChannelMasks ones{std::vector<int>(16, 1), std::vector<int>(16, 1), std::vector<int>(16, 1)};
  const auto p = surgery(m, ones);
  EXPECT_EQ(count_params(p), count_params(m));
  auto x = random_tensor<float>({4, 1, 28, 28}, rng);
  EXPECT_EQ(infer(p, x), infer(m, x));
  // Idempotent on an already-pruned model.
  EXPECT_EQ(infer(surgery(p, ones), x), infer(p, x));
}

TEST(Surgery, PruningOneChannelShrinksNeighbours) {
  Rng rng(4);
  auto m = make_convnet_s({1, 28, 28}, 10, rng);
  ChannelMasks masks{std::vector<int>(16, 1), std::vector<int>(16, 1), std::vector<int>(16, 1)};
  masks[0][5] = 0;
  masks[2][0] = 0;
  masks[2][15] = 0;
  const auto p = surgery(m, masks);
  EXPECT_EQ(std::get<Conv2dLayer<float>>(p.layers[0]).weight.shape(), (Shape{15, 1, 3, 3}));
  EXPECT_EQ(std::get<Conv2dLayer<float>>(p.layers[4]).weight.shape(), (Shape{16, 15, 3, 3}));
  EXPECT_EQ(std::get<Conv2dLayer<float>>(p.layers[8]).weight.shape(), (Shape{14, 16, 3, 3}));
  EXPECT_EQ(std::get<DenseLayer<float>>(p.layers[13]).weight.shape(), (Shape{10, 14 * 9}));
  const auto& bn = std::get<BatchNormLayer<float>>(p.layers[1]);
  EXPECT_EQ(bn.channels(), 15u);
  EXPECT_FALSE(bn.masked);
  // Next conv keeps input columns 0..4 and 6..15 of the original.
  const auto& w_old = std::get<Conv2dLayer<float>>(m.layers[4]).weight;
  const auto& w_new = std::get<Conv2dLayer<float>>(p.layers[4]).weight;
  EXPECT_EQ(w_new.at(3, 5, 1, 2), w_old.at(3, 6, 1, 2));
  EXPECT_EQ(w_new.at(3, 4, 1, 2), w_old.at(3, 4, 1, 2));
  // Dense keeps contiguous 9-column blocks of channels 1..14.
  const auto& d_old = std::get<DenseLayer<float>>(m.layers[13]).weight;
  const auto& d_new = std::get<DenseLayer<float>>(p.layers[13]).weight;
  EXPECT_EQ(d_new[0], d_old[9]);
  EXPECT_EQ(d_new[2 * 126 + 125], d_old[2 * 144 + 14 * 9 + 8]);
}

TEST(Surgery, RemovedSlicesNeverInfluenceOutput) {
  Rng rng(5);
  auto m = make_convnet_s({1, 28, 28}, 10, rng);
  randomize(m, rng, 0.0);
  ChannelMasks masks{std::vector<int>(16, 1), std::vector<int>(16, 1), std::vector<int>(16, 1)};
  masks[1][3] = 0;
  // Scramble the weights that read the removed channel; the pruned output must not change.
  auto scrambled = m;
  auto& w = std::get<Conv2dLayer<float>>(scrambled.layers[8]).weight;
  for (std::size_t o = 0; o < 16; ++o)
    for (std::size_t y = 0; y < 3; ++y)
      for (std::size_t xx = 0; xx < 3; ++xx) w.at(o, 3, y, xx) = 100.0f;
  auto x = random_tensor<float>({2, 1, 28, 28}, rng);
  EXPECT_EQ(infer(surgery(m, masks), x), infer(surgery(scrambled, masks), x));
}

TEST(Surgery, EquivalentToEvalModeMaskedModel) {
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    auto m = make_convnet_s({1, 28, 28}, 10, rng);
    randomize(m, rng, 0.4);
    const auto masks = extract_masks(m);
    const auto p = surgery(m, masks.masks);
    auto x = random_tensor<float>({10, 1, 28, 28}, rng);
    const auto a = infer(m, x), b = infer(p, x);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
    EXPECT_EQ(predict(m, x), predict(p, x));
    EXPECT_LE(count_flops(p, m.input_shape), count_flops(m, m.input_shape));
    EXPECT_LE(count_params(p), count_params(m));
  }
}

TEST(Surgery, VggMiniEquivalence) {
  Rng rng(7);
  auto m = make_vgg_mini({3, 16, 16}, 10, rng);
  randomize(m, rng, 0.5);
  const auto p = surgery(m, extract_masks(m).masks);
  auto x = random_tensor<float>({3, 3, 16, 16}, rng);
  const auto a = infer(m, x), b = infer(p, x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);
}

TEST(Surgery, Errors) {
  Rng rng(8);
  auto m = make_convnet_s({1, 28, 28}, 10, rng);
  ChannelMasks wrong_count{std::vector<int>(16, 1)};
  EXPECT_THROW(surgery(m, wrong_count), std::invalid_argument);
  ChannelMasks wrong_len{std::vector<int>(15, 1), std::vector<int>(16, 1), std::vector<int>(16, 1)};
  EXPECT_THROW(surgery(m, wrong_len), std::invalid_argument);
  ChannelMasks empty_layer{std::vector<int>(16, 0), std::vector<int>(16, 1), std::vector<int>(16, 1)};
  EXPECT_THROW(surgery(m, empty_layer), std::invalid_argument);
}

TEST(Report, Percentages) {
  Rng rng(9);
  auto m = make_convnet_s({1, 28, 28}, 10, rng);
  const auto same = make_report(m, m, m.input_shape);
  EXPECT_EQ(same.channel_reduction_pct(), 0.0);
  EXPECT_EQ(same.param_reduction_pct(), 0.0);
  EXPECT_EQ(same.flops_reduction_pct(), 0.0);
  EXPECT_DOUBLE_EQ(reduction_pct(100, 25), 75.0);
  EXPECT_EQ(reduction_pct(0, 0), 0.0);

  ChannelMasks masks{std::vector<int>(16, 1), std::vector<int>(16, 1), std::vector<int>(16, 1)};
  for (int c = 0; c < 8; ++c) masks[1][c] = 0;
  const auto r = make_report(m, surgery(m, masks), m.input_shape);
  EXPECT_EQ(r.channels_before, 48u);
  EXPECT_EQ(r.channels_after, 40u);
  EXPECT_NEAR(r.channel_reduction_pct(), 100.0 * 8 / 48, 1e-12);
  EXPECT_EQ(r.layers[1].kept, 8u);
  EXPECT_EQ(r.layers[1].total, 16u);
  const auto text = format_report(r);
  EXPECT_NE(text.find("channels.reduction_pct = 16.67"), std::string::npos);
  EXPECT_NE(format_report(same).find("flops.reduction_pct = 0.00"), std::string::npos);
}
