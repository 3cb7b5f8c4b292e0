#ifndef SCP_PRUNER_HPP_
#define SCP_PRUNER_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "scp/model.hpp"

namespace scp {

/// One binary keep vector per BN layer, in layer order (1 = keep).
using ChannelMasks = std::vector<std::vector<int>>;

struct MaskExtraction {
  ChannelMasks masks;
  std::vector<std::string> warnings;
};

/**
 * Hard masks for every BN layer. Masked layers apply the model's mask rule
 * (or the one given); plain BN layers keep everything. A layer whose
 * channels would all be pruned keeps its lowest-probability channel and
 * reports a warning.
 */
MaskExtraction extract_masks(const Model& model);
MaskExtraction extract_masks(const Model& model, const MaskHyperParams& hyper, const MaskCriterion& criterion);

/**
 * Physically removes masked channels: output rows of the producing conv,
 * the BN entries, and the matching input slices of the consuming conv or,
 * across a flatten, the contiguous H*W column block of the dense layer.
 * Pruned BN layers become plain BN. Every layer must keep at least one
 * channel.
 */
Model surgery(const Model& model, const ChannelMasks& masks);

/// Weights, biases and BN affine entries.
std::uint64_t count_params(const Model& model);

/// 2 * MACs of conv and dense layers; BN, ReLU and pooling count as zero.
std::uint64_t count_flops(const Model& model, const Shape& input_shape);

struct LayerChannels {
  std::size_t layer_index;
  std::size_t kept;
  std::size_t total;
};

struct PruneReport {
  std::vector<LayerChannels> layers;
  std::uint64_t channels_before = 0, channels_after = 0;
  std::uint64_t params_before = 0, params_after = 0;
  std::uint64_t flops_before = 0, flops_after = 0;

  double channel_reduction_pct() const;
  double param_reduction_pct() const;
  double flops_reduction_pct() const;
};

/// Channel counts are over BN layers, matched by position.
PruneReport make_report(const Model& before, const Model& after, const Shape& input_shape);

/// `key = value` text record; see docs in README.
std::string format_report(const PruneReport& report);

double reduction_pct(std::uint64_t before, std::uint64_t after);

}  // namespace scp

#endif  // SCP_PRUNER_HPP_
