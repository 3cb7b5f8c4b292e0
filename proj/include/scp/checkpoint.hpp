#ifndef SCP_CHECKPOINT_HPP_
#define SCP_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <string>

#include "scp/model.hpp"

namespace scp {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  std::size_t epoch = 0;          // completed epochs
  std::string config_hash;        // empty when not produced by train
  std::string config_text;
};

struct Checkpoint {
  Model model;
  CheckpointMeta meta;
};

/**
 * Directory layout:
 *   manifest.json   architecture, input shape, mask rule, layer list, meta
 *   tensor_NNN.bin  raw little-endian float32 payloads named by the manifest
 * An existing directory is overwritten file by file.
 */
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace scp

#endif  // SCP_CHECKPOINT_HPP_
