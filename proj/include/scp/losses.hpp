#ifndef SCP_LOSSES_HPP_
#define SCP_LOSSES_HPP_

#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "scp/mask.hpp"

namespace scp {

struct SparsityConfig {
  double lambda = 0.0;
  double s = 3.0;
  double delta_new = 0.05;
  MaskVariant variant = MaskVariant::with_relu;
  std::optional<double> target_ratio;

  void validate() const;
  MaskCriterion criterion() const { return {variant, delta_new}; }
};

struct LossBreakdown {
  double classification = 0.0;
  double sparsity = 0.0;
  double total = 0.0;
};

/// Loss value with its gradient w.r.t. every beta and gamma.
struct SparsityTerm {
  double value = 0.0;
  std::vector<double> d_beta;
  std::vector<double> d_gamma;
};

/**
 * sum_j beta_j + s |gamma_j|. Lowering beta or |gamma| moves the channel's
 * post-BN Gaussian under the ReLU threshold, so the mask probability rises.
 * `selected`, when given, restricts the sum (and the gradient) to a subset.
 */
SparsityTerm sparsity_loss(std::span<const double> betas, std::span<const double> gammas, double s,
                           const std::vector<bool>* selected = nullptr);

/// sum_j |beta_j + s|gamma_j|| + |beta_j - s|gamma_j||, subgradient 0 at kinks.
SparsityTerm sparsity_loss_norelu(std::span<const double> betas, std::span<const double> gammas, double s,
                                  const std::vector<bool>* selected = nullptr);

/// Dispatches on the configured variant.
SparsityTerm sparsity_term(std::span<const double> betas, std::span<const double> gammas,
                           const SparsityConfig& config, const std::vector<bool>* selected = nullptr);

LossBreakdown total_loss(double classification, double sparsity, double lambda);

enum class UpdateKind { sparsity_only, joint };

struct TargetRatioDecision {
  UpdateKind update = UpdateKind::joint;
  std::vector<bool> selected;  // over the flattened channel list
};

/**
 * Picks the ceil(target_ratio * C) channels with the highest mask
 * probability; ties go to the earlier channel in flattened (layer, channel)
 * order. The step is sparsity-only iff the sparsity loss went up since the
 * previous step.
 */
TargetRatioDecision target_ratio_step(std::span<const double> channel_phis, double target_ratio,
                                      double prev_sparsity, double current_sparsity);

/// Channel selection half of target_ratio_step.
std::vector<bool> select_top_channels(std::span<const double> channel_phis, double target_ratio);

/// Remembers the previous step's sparsity value; starts at +inf so the
/// first step is always joint.
class TargetRatioController {
 public:
  explicit TargetRatioController(double target_ratio) : target_ratio_(target_ratio) {}

  std::vector<bool> select(std::span<const double> channel_phis) const {
    return select_top_channels(channel_phis, target_ratio_);
  }
  UpdateKind decide(double current_sparsity);

  double target_ratio() const { return target_ratio_; }
  double previous_sparsity() const { return prev_sparsity_; }

 private:
  double target_ratio_;
  double prev_sparsity_ = std::numeric_limits<double>::infinity();
};

}  // namespace scp

#endif  // SCP_LOSSES_HPP_
