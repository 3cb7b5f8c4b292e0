#include <gtest/gtest.h>

#include <fstream>

#include "scp/checkpoint.hpp"
#include "scp/pruner.hpp"
#include "scp/trainer.hpp"
#include "test_util.hpp"

using namespace scp;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Model perturbed_model(std::uint64_t seed) {
  Rng rng(seed);
  auto m = make_convnet_s({1, 28, 28}, 10, rng);
  for (auto i : m.bn_layer_indices()) {
    auto& bn = std::get<BatchNormLayer<float>>(m.layers[i]);
    for (std::size_t c = 0; c < bn.channels(); ++c) {
      bn.beta[c] = static_cast<float>(rng.normal());
      bn.gamma[c] = static_cast<float>(rng.normal());
      bn.running_mean[c] = static_cast<float>(rng.normal());
      bn.running_var[c] = static_cast<float>(0.5 + rng.uniform());
    }
  }
  m.hyper.c = 0.7;
  m.criterion.variant = MaskVariant::no_relu;
  m.criterion.delta_new = 0.03;
  return m;
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = testkit::temp_dir("ckpt_rt");
  auto m = perturbed_model(1);
  save_checkpoint({m, {7, "abc", "train.epochs = 7\n"}}, dir / "a");
  auto back = load_checkpoint(dir / "a");
  EXPECT_EQ(back.meta.epoch, 7u);
  EXPECT_EQ(back.meta.config_hash, "abc");
  EXPECT_EQ(back.meta.config_text, "train.epochs = 7\n");
  EXPECT_EQ(back.model.input_shape, m.input_shape);
  EXPECT_EQ(back.model.num_classes, 10u);
  EXPECT_EQ(back.model.hyper.c, 0.7);
  EXPECT_EQ(back.model.criterion.variant, MaskVariant::no_relu);
  EXPECT_EQ(back.model.criterion.delta_new, 0.03);
  ASSERT_EQ(back.model.layers.size(), m.layers.size());
  auto pa = m.parameters();
  auto pb = back.model.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i].tensor, *pb[i].tensor);
  for (auto i : m.bn_layer_indices()) {
    const auto& x = std::get<BatchNormLayer<float>>(m.layers[i]);
    const auto& y = std::get<BatchNormLayer<float>>(back.model.layers[i]);
    EXPECT_EQ(x.running_mean, y.running_mean);
    EXPECT_EQ(x.running_var, y.running_var);
    EXPECT_EQ(x.masked, y.masked);
  }
  // Saving the loaded model reproduces every file byte for byte.
  save_checkpoint(back, dir / "b");
  for (const auto& entry : fs::directory_iterator(dir / "a")) {
    EXPECT_EQ(slurp(entry.path()), slurp(dir / "b" / entry.path().filename())) << entry.path();
  }
}

TEST(Checkpoint, LoadedModelEvaluatesIdentically) {
  const auto dir = testkit::temp_dir("ckpt_eval");
  const auto m = perturbed_model(2);
  save_checkpoint({m, {}}, dir);
  const auto back = load_checkpoint(dir);
  Rng rng(3);
  const auto x = testkit::random_tensor<float>({8, 1, 28, 28}, rng);
  EXPECT_EQ(infer(m, x), infer(back.model, x));
}

TEST(Checkpoint, PrunedModelRoundTrips) {
  const auto dir = testkit::temp_dir("ckpt_pruned");
  const auto m = perturbed_model(4);
  const auto pruned = surgery(m, extract_masks(m).masks);
  save_checkpoint({pruned, {}}, dir);
  const auto back = load_checkpoint(dir);
  EXPECT_EQ(count_params(back.model), count_params(pruned));
  Rng rng(5);
  const auto x = testkit::random_tensor<float>({4, 1, 28, 28}, rng);
  EXPECT_EQ(infer(pruned, x), infer(back.model, x));
}

TEST(Checkpoint, Errors) {
  const auto dir = testkit::temp_dir("ckpt_err");
  EXPECT_THROW(load_checkpoint(dir / "none"), CheckpointError);
  save_checkpoint({perturbed_model(6), {}}, dir / "c");
  fs::resize_file(dir / "c" / "tensor_000.bin", 12);
  EXPECT_THROW(load_checkpoint(dir / "c"), CheckpointError);
  fs::create_directories(dir / "j");
  std::ofstream(dir / "j" / "manifest.json") << "{ not json";
  EXPECT_THROW(load_checkpoint(dir / "j"), CheckpointError);
}
