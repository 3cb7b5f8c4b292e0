#include <gtest/gtest.h>

#include <fstream>

#include "scp/checkpoint.hpp"
#include "scp/trainer.hpp"
#include "test_util.hpp"

using namespace scp;
namespace fs = std::filesystem;

namespace {

ExperimentConfig small_config(const fs::path& out) {
  ExperimentConfig cfg;
  const fs::path dir = fs::path(SCP_DATA_DIR) / "mnist";
  cfg.dataset.train_images = dir / "train-images-idx3-ubyte";
  cfg.dataset.train_labels = dir / "train-labels-idx1-ubyte";
  cfg.dataset.test_images = dir / "test-images-idx3-ubyte";
  cfg.dataset.test_labels = dir / "test-labels-idx1-ubyte";
  cfg.dataset.train_size = 200;
  cfg.dataset.test_size = 100;
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.schedule = {0.05, {1}, 10.0};
  cfg.sparsity.lambda = 1e-3;
  cfg.output_dir = out;
  return cfg;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Trainer, SameSeedReproducesEveryByte) {
  const auto dir = testkit::temp_dir("trainer_det");
  // Identical config includes the output directory, so the first run is set aside.
  const auto cfg = small_config(dir / "run");
  const auto data = load_datasets(cfg.dataset);
  const auto ra = train(cfg, data);
  fs::rename(dir / "run", dir / "first");
  const auto rb = train(cfg, data);
  EXPECT_EQ(metrics_csv(ra.metrics), metrics_csv(rb.metrics));
  for (const auto& entry : fs::directory_iterator(dir / "first" / "checkpoint")) {
    EXPECT_EQ(slurp(entry.path()), slurp(dir / "run" / "checkpoint" / entry.path().filename())) << entry.path();
  }
  EXPECT_EQ(slurp(dir / "first" / "metrics.csv"), slurp(dir / "run" / "metrics.csv"));
  EXPECT_TRUE(fs::exists(dir / "run" / "summary.json"));

  auto c = small_config(dir / "c");
  c.seed = 2;
  EXPECT_NE(metrics_csv(train(c, data, {false, {}}).metrics), metrics_csv(ra.metrics));
}

TEST(Trainer, MetricsAndScheduleRecorded) {
  auto cfg = small_config(testkit::temp_dir("trainer_metrics"));
  const auto data = load_datasets(cfg.dataset);
  std::vector<std::size_t> seen;
  const auto r = train(cfg, data, {false, [&](const EpochMetrics& m) { seen.push_back(m.epoch); }});
  EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2}));
  ASSERT_EQ(r.metrics.size(), 2u);
  EXPECT_DOUBLE_EQ(r.metrics[0].learning_rate, 0.05);
  EXPECT_DOUBLE_EQ(r.metrics[1].learning_rate, 0.005);
  // 200 samples in batches of 32: six full batches plus one of 8.
  EXPECT_EQ(r.metrics[0].steps, 7u);
  EXPECT_EQ(r.metrics[0].sparsity_only_steps, 0u);
  EXPECT_GT(r.metrics[1].test_accuracy, 0.3);
  EXPECT_NEAR(r.metrics[0].total_loss, r.metrics[0].classification_loss + 1e-3 * r.metrics[0].sparsity_loss, 0.01);
  const auto csv = metrics_csv(r.metrics);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(csv.rfind("epoch,learning_rate,", 0), 0u);
}

TEST(Trainer, ZeroLambdaLeavesSparsityTermOutOfTheUpdate) {
  auto cfg = small_config(testkit::temp_dir("trainer_lambda0"));
  cfg.sparsity.lambda = 0.0;
  cfg.epochs = 1;
  const auto data = load_datasets(cfg.dataset);
  const auto r = train(cfg, data, {false, {}});
  EXPECT_DOUBLE_EQ(r.metrics[0].total_loss, r.metrics[0].classification_loss);
  EXPECT_GT(r.metrics[0].sparsity_loss, 0.0);
}

TEST(Trainer, TargetRatioProducesSparsityOnlySteps) {
  auto cfg = small_config(testkit::temp_dir("trainer_target"));
  cfg.sparsity.target_ratio = 0.4;
  cfg.sparsity.lambda = 1e-2;
  cfg.epochs = 3;
  const auto data = load_datasets(cfg.dataset);
  const auto r = train(cfg, data, {false, {}});
  std::size_t only = 0;
  for (const auto& m : r.metrics) only += m.sparsity_only_steps;
  // Sparsity-only steps happen whenever the weight update raised the selected sparsity loss.
  EXPECT_GT(only, 0u);
}

TEST(Trainer, RejectsTinyTrainingSet) {
  auto cfg = small_config(testkit::temp_dir("trainer_tiny"));
  cfg.dataset.train_size = 1;
  const auto data = load_datasets(cfg.dataset);
  EXPECT_THROW(train(cfg, data, {false, {}}), std::invalid_argument);
}

TEST(Evaluate, PerfectAndConstantPredictors) {
  Rng rng(1);
  auto m = make_convnet_s({1, 8, 8}, 3, rng);
  Dataset ds;
  ds.images = testkit::random_tensor<float>({6, 1, 8, 8}, rng);
  const auto predicted = predict(m, ds.images, 4);
  ASSERT_EQ(predicted.size(), 6u);
  ds.labels = predicted;
  EXPECT_DOUBLE_EQ(evaluate(m, ds, 4), 1.0);

  // Force class 2 everywhere: zero the dense weights and bias the last class.
  auto& dense = std::get<DenseLayer<float>>(m.layers.back());
  for (auto& w : dense.weight.data()) w = 0.0f;
  dense.bias[2] = 1.0f;
  ds.labels = {2, 2, 0, 1, 2, 0};
  EXPECT_DOUBLE_EQ(evaluate(m, ds), 0.5);
}

TEST(Evaluate, EmptyDatasetThrows) {
  Rng rng(2);
  const auto m = make_convnet_s({1, 8, 8}, 3, rng);
  Dataset empty;
  EXPECT_THROW(evaluate(m, empty), std::invalid_argument);
}

TEST(SoftPruneRatio, CountsChannelsAtOrAboveCutoff) {
  Rng rng(3);
  auto m = make_convnet_s({1, 28, 28}, 10, rng);
  EXPECT_EQ(soft_prune_ratio(m), 0.0);
  auto& bn = std::get<BatchNormLayer<float>>(m.layers[1]);
  for (std::size_t c = 0; c < 12; ++c) bn.beta[c] = -5.0f;
  EXPECT_DOUBLE_EQ(soft_prune_ratio(m), 12.0 / 48.0);
}
