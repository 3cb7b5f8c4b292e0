#include <gtest/gtest.h>

#include <fstream>

#include "scp/data.hpp"
#include "test_util.hpp"

using namespace scp;
namespace fs = std::filesystem;

namespace {

RawImages synthetic(std::size_t n, std::size_t c, std::size_t h, std::size_t w, std::uint8_t fill = 0) {
  RawImages raw;
  raw.shape = {n, c, h, w};
  raw.pixels.resize(n * c * h * w, fill);
  for (std::size_t i = 0; i < n; ++i) raw.labels.push_back(static_cast<std::int32_t>(i % 10));
  return raw;
}

void write_bytes(const fs::path& p, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(Idx, FourImageFixtureShape) {
  const auto dir = testkit::temp_dir("idx4");
  auto raw = synthetic(4, 1, 28, 28);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) raw.pixels[i] = static_cast<std::uint8_t>(i * 7);
  write_idx(raw, dir / "img", dir / "lab");
  const auto bytes = read_bytes(dir / "img");
  ASSERT_EQ(bytes.size(), 16u + 4 * 784);
  EXPECT_EQ(bytes[2], 0x08);
  EXPECT_EQ(bytes[3], 0x03);
  const auto back = read_idx(dir / "img", dir / "lab");
  EXPECT_EQ(back.shape, (Shape{4, 1, 28, 28}));
  EXPECT_EQ(back.pixels, raw.pixels);
  EXPECT_EQ(back.labels, raw.labels);
  const auto ds = load_idx(dir / "img", dir / "lab", {{0.0f}, {1.0f}});
  EXPECT_EQ(ds.images.shape(), (Shape{4, 1, 28, 28}));
  EXPECT_FLOAT_EQ(ds.images[1], 7.0f / 255.0f);
}

TEST(Idx, LimitKeepsPrefix) {
  const auto dir = testkit::temp_dir("idx_limit");
  write_idx(synthetic(6, 1, 2, 2), dir / "img", dir / "lab");
  const auto raw = read_idx(dir / "img", dir / "lab", 3);
  EXPECT_EQ(raw.shape[0], 3u);
  EXPECT_EQ(raw.labels, (std::vector<std::int32_t>{0, 1, 2}));
}

TEST(Idx, LabelCountMismatch) {
  const auto dir = testkit::temp_dir("idx_mismatch");
  write_idx(synthetic(4, 1, 2, 2), dir / "img", dir / "lab");
  auto lab = read_bytes(dir / "lab");
  lab[7] = 3;  // header now claims 3 labels
  write_bytes(dir / "lab", lab);
  EXPECT_THROW(read_idx(dir / "img", dir / "lab"), ParseError);
}

TEST(Idx, BadMagicAndTruncation) {
  const auto dir = testkit::temp_dir("idx_bad");
  write_idx(synthetic(4, 1, 2, 2), dir / "img", dir / "lab");
  auto img = read_bytes(dir / "img");
  auto bad = img;
  bad[3] = 0x01;
  write_bytes(dir / "bad", bad);
  try {
    read_idx(dir / "bad", dir / "lab");
    FAIL() << "bad magic accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  img.resize(img.size() - 1);
  write_bytes(dir / "short", img);
  try {
    read_idx(dir / "short", dir / "lab");
    FAIL() << "truncated file accepted";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), img.size());
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
  }
  write_bytes(dir / "tiny", {0, 0, 8});
  EXPECT_THROW(read_idx(dir / "tiny", dir / "lab"), ParseError);
  EXPECT_THROW(read_idx(dir / "missing", dir / "lab"), std::runtime_error);
}

TEST(Idx, ConstantFixtureStandardizesToZero) {
  const auto raw = synthetic(3, 1, 4, 4, 51);  // 51/255 = 0.2
  const auto ds = to_dataset(raw, {{0.2f}, {0.5f}});
  for (float v : ds.images.data()) EXPECT_NEAR(v, 0.0f, 1e-7);
}

TEST(Cifar, TwoRecordFixture) {
  const auto dir = testkit::temp_dir("cifar2");
  auto raw = synthetic(2, 3, 32, 32);
  raw.labels = {9, 3};
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) raw.pixels[i] = static_cast<std::uint8_t>(i % 251);
  write_cifar_binary(raw, dir / "b.bin");
  EXPECT_EQ(fs::file_size(dir / "b.bin"), 2u * 3073);
  const auto back = read_cifar_binary(dir / "b.bin");
  EXPECT_EQ(back.shape, (Shape{2, 3, 32, 32}));
  EXPECT_EQ(back.labels[0], 9);
  EXPECT_EQ(back.pixels, raw.pixels);
  EXPECT_EQ(read_bytes(dir / "b.bin")[0], 9);
  const auto ds = load_cifar_binary(dir / "b.bin", {{0.5f, 0.5f, 0.5f}, {0.25f, 0.25f, 0.25f}});
  EXPECT_EQ(ds.images.shape(), (Shape{2, 3, 32, 32}));
}

TEST(Cifar, RoundTripIsBitExact) {
  const auto dir = testkit::temp_dir("cifar_rt");
  Rng rng(1);
  auto raw = synthetic(5, 3, 32, 32);
  for (auto& p : raw.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  write_cifar_binary(raw, dir / "a.bin");
  const auto first = read_bytes(dir / "a.bin");
  write_cifar_binary(read_cifar_binary(dir / "a.bin"), dir / "b.bin");
  EXPECT_EQ(read_bytes(dir / "b.bin"), first);
}

TEST(Cifar, Errors) {
  const auto dir = testkit::temp_dir("cifar_bad");
  write_bytes(dir / "odd.bin", std::vector<std::uint8_t>(3072, 0));
  EXPECT_THROW(read_cifar_binary(dir / "odd.bin"), ParseError);
  std::vector<std::uint8_t> rec(3073, 0);
  rec[0] = 10;
  write_bytes(dir / "label.bin", rec);
  EXPECT_THROW(read_cifar_binary(dir / "label.bin"), ParseError);
}

TEST(Normalization, PerChannelAndChecks) {
  auto raw = synthetic(1, 3, 1, 1);
  raw.pixels = {255, 0, 51};
  const auto ds = to_dataset(raw, {{0.5f, 0.0f, 0.2f}, {0.5f, 1.0f, 0.1f}});
  EXPECT_FLOAT_EQ(ds.images[0], 1.0f);
  EXPECT_FLOAT_EQ(ds.images[1], 0.0f);
  EXPECT_NEAR(ds.images[2], 0.0f, 1e-6);
  EXPECT_THROW(to_dataset(raw, {{0.5f}, {0.5f}}), std::invalid_argument);
  EXPECT_THROW(to_dataset(raw, {{0, 0, 0}, {1, 0, 1}}), std::invalid_argument);
}

TEST(Dataset, Gather) {
  auto raw = synthetic(3, 1, 1, 2);
  raw.pixels = {0, 1, 2, 3, 4, 5};
  const auto ds = to_dataset(raw, {{0.0f}, {1.0f / 255.0f}});
  const auto batch = ds.gather({2, 0});
  EXPECT_EQ(batch.shape(), (Shape{2, 1, 1, 2}));
  EXPECT_FLOAT_EQ(batch[0], 4.0f);
  EXPECT_FLOAT_EQ(batch[3], 1.0f);
  EXPECT_EQ(ds.gather_labels({2, 0}), (std::vector<std::int32_t>{2, 0}));
}

TEST(BundledMnist, Loads) {
  const fs::path dir = fs::path(SCP_DATA_DIR) / "mnist";
  const auto train = read_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  const auto test = read_idx(dir / "test-images-idx3-ubyte", dir / "test-labels-idx1-ubyte");
  EXPECT_EQ(train.shape, (Shape{8000, 1, 28, 28}));
  EXPECT_EQ(test.shape, (Shape{2000, 1, 28, 28}));
  for (auto l : train.labels) {
    ASSERT_GE(l, 0);
    ASSERT_LE(l, 9);
  }
}
