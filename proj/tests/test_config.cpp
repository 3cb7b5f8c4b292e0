#include <gtest/gtest.h>

#include <fstream>

#include "scp/config.hpp"
#include "test_util.hpp"

using namespace scp;
namespace fs = std::filesystem;

TEST(KeyValueDoc, GrammarCommentsAndOverride) {
  const auto doc = KeyValueDoc::parse("# header\n\na.b = 1  # trailing\n  c_d=hello world \na.b = 2\n");
  EXPECT_EQ(doc.get("a.b").value(), "2");
  EXPECT_EQ(doc.get("c_d").value(), "hello world");
  EXPECT_FALSE(doc.get("missing").has_value());
}

TEST(KeyValueDoc, SyntaxErrorsNameTheLine) {
  try {
    KeyValueDoc::parse("a = 1\nnot a pair\n", "f.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("f.cfg:2"), std::string::npos);
  }
  EXPECT_THROW(KeyValueDoc::parse("bad key = 1\n"), ConfigError);
  EXPECT_THROW(KeyValueDoc::parse("= 1\n"), ConfigError);
}

TEST(ExperimentConfig, DefaultsFollowTrainingSetup) {
  const auto cfg = ExperimentConfig::from_doc(KeyValueDoc{});
  EXPECT_EQ(cfg.batch_size, 64u);
  EXPECT_DOUBLE_EQ(cfg.momentum, 0.9);
  EXPECT_DOUBLE_EQ(cfg.weight_decay, 1e-4);
  EXPECT_DOUBLE_EQ(cfg.schedule.factor, 10.0);
  EXPECT_DOUBLE_EQ(cfg.mask.delta, 0.05);
  EXPECT_DOUBLE_EQ(cfg.mask.tau, 0.5);
  EXPECT_DOUBLE_EQ(cfg.sparsity.s, 3.0);
}

TEST(ExperimentConfig, ParsesEveryKey) {
  const auto doc = KeyValueDoc::parse(R"(
dataset.format = cifar
dataset.train_path = tr.bin
dataset.test_path = /abs/te.bin
dataset.train_size = 100
dataset.test_size = 50
dataset.mean = 0.4,0.5,0.6
dataset.std = 0.2, 0.2, 0.2
dataset.flip = true
model.architecture = vgg-mini
mask.delta = 0.1
mask.c = 0.7
mask.k = 30
mask.tau = 0.25
sparsity.lambda = 3e-5
sparsity.s = 2
sparsity.delta_new = 0.02
sparsity.variant = no_relu
sparsity.target_ratio = 0.4
optim.lr = 0.05
optim.momentum = 0.8
optim.weight_decay = 5e-4
optim.decay_epochs = 3, 6
optim.decay_factor = 5
train.epochs = 7
train.batch_size = 32
train.seed = 99
output.dir = out
)");
  const auto cfg = ExperimentConfig::from_doc(doc, "/base");
  EXPECT_EQ(cfg.dataset.format, "cifar");
  EXPECT_EQ(cfg.dataset.train_path, fs::path("/base/tr.bin"));
  EXPECT_EQ(cfg.dataset.test_path, fs::path("/abs/te.bin"));
  EXPECT_EQ(cfg.dataset.train_size, 100u);
  EXPECT_EQ(cfg.dataset.mean.size(), 3u);
  EXPECT_FLOAT_EQ(cfg.dataset.mean[2], 0.6f);
  EXPECT_TRUE(cfg.dataset.flip);
  EXPECT_EQ(cfg.architecture, "vgg-mini");
  EXPECT_DOUBLE_EQ(cfg.mask.c, 0.7);
  EXPECT_DOUBLE_EQ(cfg.sparsity.lambda, 3e-5);
  EXPECT_EQ(cfg.sparsity.variant, MaskVariant::no_relu);
  EXPECT_DOUBLE_EQ(cfg.sparsity.target_ratio.value(), 0.4);
  EXPECT_EQ(cfg.schedule.decay_epochs, (std::vector<std::size_t>{3, 6}));
  EXPECT_EQ(cfg.epochs, 7u);
  EXPECT_EQ(cfg.seed, 99u);
  EXPECT_EQ(cfg.output_dir, fs::path("/base/out"));
}

TEST(ExperimentConfig, RejectsBadValues) {
  auto bad = [](const std::string& text) {
    EXPECT_THROW(ExperimentConfig::from_doc(KeyValueDoc::parse(text)), ConfigError) << text;
  };
  bad("train.batch_size = 1\n");
  bad("train.batch_size = -4\n");
  bad("train.epochs = 0\n");
  bad("mask.c = 1.5\n");
  bad("mask.tau = 0\n");
  bad("sparsity.lambda = -1\n");
  bad("sparsity.variant = maybe\n");
  bad("sparsity.target_ratio = 1\n");
  bad("model.architecture = resnet\n");
  bad("dataset.format = png\n");
  bad("optim.lr = 0\n");
  bad("optim.lr = fast\n");
  bad("optim.decay_epochs = 2.5\n");
  bad("no.such.key = 1\n");
  bad("dataset.mean = 0.1,0.2\n");
}

TEST(ExperimentConfig, TextRoundTripAndHash) {
  auto doc = KeyValueDoc::parse("sparsity.lambda = 1e-5\noptim.decay_epochs = 10,15\ndataset.mean = 0.1307\n");
  const auto cfg = ExperimentConfig::from_doc(doc);
  const auto again = ExperimentConfig::from_doc(KeyValueDoc::parse(cfg.to_text()));
  EXPECT_EQ(again.to_text(), cfg.to_text());
  EXPECT_EQ(again.hash(), cfg.hash());
  EXPECT_EQ(cfg.hash().size(), 16u);
  auto other = cfg;
  other.seed = 2;
  EXPECT_NE(other.hash(), cfg.hash());
}

TEST(ExperimentConfig, LoadResolvesRelativeToFileAndChecksPaths) {
  const auto dir = testkit::temp_dir("config_load");
  fs::create_directories(dir / "sub");
  std::ofstream(dir / "sub" / "a.idx") << "x";
  std::ofstream(dir / "run.cfg") << "dataset.train_images = sub/a.idx\n"
                                    "dataset.train_labels = sub/a.idx\n"
                                    "dataset.test_images = sub/a.idx\n"
                                    "dataset.test_labels = sub/missing.idx\n";
  auto cfg = ExperimentConfig::load(dir / "run.cfg");
  EXPECT_EQ(cfg.dataset.train_images, dir / "sub" / "a.idx");
  EXPECT_THROW(cfg.check_paths(), ConfigError);
  cfg = ExperimentConfig::load(dir / "run.cfg", {{"dataset.test_labels", "sub/a.idx"}, {"train.epochs", "3"}});
  EXPECT_NO_THROW(cfg.check_paths());
  EXPECT_EQ(cfg.epochs, 3u);
  EXPECT_THROW(ExperimentConfig::load(dir / "nope.cfg"), ConfigError);
}

TEST(NumberList, Parses) {
  EXPECT_EQ(parse_number_list("1e-6, 5e-6,1e-5"), (std::vector<double>{1e-6, 5e-6, 1e-5}));
  EXPECT_TRUE(parse_number_list("").empty());
  EXPECT_THROW(parse_number_list("1,x"), ConfigError);
}
