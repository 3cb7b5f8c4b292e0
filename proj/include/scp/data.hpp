#ifndef SCP_DATA_HPP_
#define SCP_DATA_HPP_

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "scp/tensor.hpp"

namespace scp {

/// Malformed dataset file; the message carries the byte offset.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::uint64_t offset)
      : std::runtime_error(what + " (byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

/// Undecoded images: bytes in NCHW order plus labels.
struct RawImages {
  Shape shape;  // [N, C, H, W]
  std::vector<std::uint8_t> pixels;
  std::vector<std::int32_t> labels;
};

struct Normalization {
  std::vector<float> mean;  // per channel, applied after scaling to [0,1]
  std::vector<float> std;
};

struct Dataset {
  Tensor images;  // [N, C, H, W], standardized
  std::vector<std::int32_t> labels;

  std::size_t size() const { return labels.size(); }
  Shape sample_shape() const { return {images.dim(1), images.dim(2), images.dim(3)}; }
  /// Gathers the given samples into a batch.
  Tensor gather(const std::vector<std::size_t>& indices) const;
  std::vector<std::int32_t> gather_labels(const std::vector<std::size_t>& indices) const;
};

/// IDX image (magic 0x00000803) and label (0x00000801) files, big-endian
/// headers. `limit` > 0 keeps only the first `limit` samples.
RawImages read_idx(const std::filesystem::path& images, const std::filesystem::path& labels, std::size_t limit = 0);
void write_idx(const RawImages& raw, const std::filesystem::path& images, const std::filesystem::path& labels);

/// CIFAR-10 binary: 3073-byte records, one label byte then 3x32x32 pixels.
RawImages read_cifar_binary(const std::filesystem::path& path, std::size_t limit = 0);
void write_cifar_binary(const RawImages& raw, const std::filesystem::path& path);

/// Scales bytes to [0,1] and standardizes per channel.
Dataset to_dataset(const RawImages& raw, const Normalization& norm);

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels, const Normalization& norm,
                 std::size_t limit = 0);
Dataset load_cifar_binary(const std::filesystem::path& path, const Normalization& norm, std::size_t limit = 0);

}  // namespace scp

#endif  // SCP_DATA_HPP_
