#include "scp/data.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>

namespace scp {

namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarSide = 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset, const std::string& file) {
  if (offset + 4 > bytes.size()) throw ParseError(file + ": truncated header", bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& bytes, std::uint32_t v) {
  bytes.push_back(static_cast<std::uint8_t>(v >> 24));
  bytes.push_back(static_cast<std::uint8_t>(v >> 16));
  bytes.push_back(static_cast<std::uint8_t>(v >> 8));
  bytes.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

Tensor Dataset::gather(const std::vector<std::size_t>& indices) const {
  const std::size_t per = images.size() / images.dim(0);
  Tensor out({indices.size(), images.dim(1), images.dim(2), images.dim(3)});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(images.data().begin() + static_cast<std::ptrdiff_t>(indices[i] * per), per,
                out.data().begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return out;
}

std::vector<std::int32_t> Dataset::gather_labels(const std::vector<std::size_t>& indices) const {
  std::vector<std::int32_t> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels[i]);
  return out;
}

RawImages read_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit) {
  const auto img = read_file(images);
  const auto lab = read_file(labels);
  const std::string img_name = images.filename().string(), lab_name = labels.filename().string();

  if (read_be32(img, 0, img_name) != kIdxImageMagic) throw ParseError(img_name + ": bad IDX image magic", 0);
  if (read_be32(lab, 0, lab_name) != kIdxLabelMagic) throw ParseError(lab_name + ": bad IDX label magic", 0);
  const std::size_t count = read_be32(img, 4, img_name);
  const std::size_t rows = read_be32(img, 8, img_name);
  const std::size_t cols = read_be32(img, 12, img_name);
  const std::size_t label_count = read_be32(lab, 4, lab_name);
  if (label_count != count) {
    throw ParseError(lab_name + ": " + std::to_string(label_count) + " labels for " + std::to_string(count) + " images", 4);
  }
  if (count == 0 || rows == 0 || cols == 0) throw ParseError(img_name + ": empty image set", 4);
  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + count * pixels) {
    throw ParseError(img_name + ": truncated, expected " + std::to_string(16 + count * pixels) + " bytes", img.size());
  }
  if (lab.size() < 8 + count) {
    throw ParseError(lab_name + ": truncated, expected " + std::to_string(8 + count) + " bytes", lab.size());
  }
  const std::size_t keep = limit ? std::min(limit, count) : count;
  RawImages raw;
  raw.shape = {keep, 1, rows, cols};
  raw.pixels.assign(img.begin() + 16, img.begin() + static_cast<std::ptrdiff_t>(16 + keep * pixels));
  raw.labels.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) raw.labels.push_back(lab[8 + i]);
  return raw;
}

void write_idx(const RawImages& raw, const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (raw.shape.size() != 4 || raw.shape[1] != 1) throw std::invalid_argument("IDX holds single-channel images");
  std::vector<std::uint8_t> img, lab;
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(raw.shape[0]));
  put_be32(img, static_cast<std::uint32_t>(raw.shape[2]));
  put_be32(img, static_cast<std::uint32_t>(raw.shape[3]));
  img.insert(img.end(), raw.pixels.begin(), raw.pixels.end());
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(raw.labels.size()));
  for (auto l : raw.labels) lab.push_back(static_cast<std::uint8_t>(l));
  write_file(images, img);
  write_file(labels, lab);
}

RawImages read_cifar_binary(const std::filesystem::path& path, std::size_t limit) {
  const auto bytes = read_file(path);
  if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
    throw ParseError(path.filename().string() + ": size " + std::to_string(bytes.size()) +
                         " is not a positive multiple of the 3073-byte record",
                     bytes.size() - bytes.size() % kCifarRecord);
  }
  const std::size_t count = bytes.size() / kCifarRecord;
  const std::size_t keep = limit ? std::min(limit, count) : count;
  RawImages raw;
  raw.shape = {keep, 3, kCifarSide, kCifarSide};
  raw.pixels.reserve(keep * (kCifarRecord - 1));
  for (std::size_t i = 0; i < keep; ++i) {
    const auto* rec = bytes.data() + i * kCifarRecord;
    if (rec[0] > 9) throw ParseError(path.filename().string() + ": label " + std::to_string(rec[0]) + " out of range", i * kCifarRecord);
    raw.labels.push_back(rec[0]);
    raw.pixels.insert(raw.pixels.end(), rec + 1, rec + kCifarRecord);
  }
  return raw;
}

void write_cifar_binary(const RawImages& raw, const std::filesystem::path& path) {
  if (raw.shape != Shape{raw.labels.size(), 3, kCifarSide, kCifarSide}) {
    throw std::invalid_argument("CIFAR binary holds [N,3,32,32] images");
  }
  std::vector<std::uint8_t> bytes;
  bytes.reserve(raw.labels.size() * kCifarRecord);
  const std::size_t per = kCifarRecord - 1;
  for (std::size_t i = 0; i < raw.labels.size(); ++i) {
    bytes.push_back(static_cast<std::uint8_t>(raw.labels[i]));
    bytes.insert(bytes.end(), raw.pixels.begin() + static_cast<std::ptrdiff_t>(i * per),
                 raw.pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
  }
  write_file(path, bytes);
}

Dataset to_dataset(const RawImages& raw, const Normalization& norm) {
  const std::size_t channels = raw.shape.at(1);
  if (norm.mean.size() != channels || norm.std.size() != channels) {
    throw std::invalid_argument("normalization needs " + std::to_string(channels) + " mean/std entries");
  }
  for (float s : norm.std) {
    if (!(s > 0.0f)) throw std::invalid_argument("normalization std must be positive");
  }
  Dataset ds{Tensor(raw.shape), raw.labels};
  const std::size_t plane = raw.shape[2] * raw.shape[3];
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    const std::size_t c = (i / plane) % channels;
    const float scaled = static_cast<float>(raw.pixels[i]) / 255.0f;
    ds.images[i] = (scaled - norm.mean[c]) / norm.std[c];
  }
  return ds;
}

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const Normalization& norm,
                 std::size_t limit) {
  return to_dataset(read_idx(images, labels, limit), norm);
}

Dataset load_cifar_binary(const std::filesystem::path& path, const Normalization& norm, std::size_t limit) {
  return to_dataset(read_cifar_binary(path, limit), norm);
}

}  // namespace scp
