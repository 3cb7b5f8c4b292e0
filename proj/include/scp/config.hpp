#ifndef SCP_CONFIG_HPP_
#define SCP_CONFIG_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "scp/data.hpp"
#include "scp/losses.hpp"
#include "scp/mask.hpp"
#include "scp/optimizer.hpp"

namespace scp {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/**
 * Flat `key = value` document. One entry per line; `#` starts a comment;
 * blank lines are ignored; keys are dotted identifiers; a later duplicate
 * key overrides an earlier one.
 */
class KeyValueDoc {
 public:
  static KeyValueDoc parse(const std::string& text, const std::string& source = "<string>");
  static KeyValueDoc load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value) { entries_[key] = value; }
  bool has(const std::string& key) const { return entries_.count(key) != 0; }
  std::optional<std::string> get(const std::string& key) const;
  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

struct DatasetSpec {
  std::string format = "idx";  // idx | cifar
  std::filesystem::path train_images, train_labels, test_images, test_labels;  // idx
  std::filesystem::path train_path, test_path;                                 // cifar
  std::size_t train_size = 0;  // 0 = all
  std::size_t test_size = 0;
  std::vector<float> mean{0.1307f};
  std::vector<float> std{0.3081f};
  bool flip = false;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  std::string architecture = "convnet-s";
  MaskHyperParams mask;
  SparsityConfig sparsity;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  LrSchedule schedule{0.1, {10, 15}, 10.0};
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  std::filesystem::path output_dir = "run";

  /// Reads the document; relative paths resolve against `base_dir`.
  static ExperimentConfig from_doc(const KeyValueDoc& doc, const std::filesystem::path& base_dir = {});
  static ExperimentConfig load(const std::filesystem::path& path,
                               const std::map<std::string, std::string>& overrides = {});

  /// Structural checks (ranges, batch size >= 2).
  void validate() const;
  /// Existence of every referenced dataset file.
  void check_paths() const;

  /// Canonical text form; parsing it back yields an identical config.
  std::string to_text() const;
  /// FNV-1a 64 over to_text(), as 16 hex digits.
  std::string hash() const;
};

Normalization normalization_of(const DatasetSpec& spec);

struct DatasetPair {
  Dataset train;
  Dataset test;
};

DatasetPair load_datasets(const DatasetSpec& spec);

std::vector<double> parse_number_list(const std::string& text);

}  // namespace scp

#endif  // SCP_CONFIG_HPP_
