#include "scp/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace scp {

void SparsityConfig::validate() const {
  if (!(lambda >= 0.0)) throw std::invalid_argument("sparsity lambda must be non-negative");
  if (!(s >= 0.0)) throw std::invalid_argument("confidence width s must be non-negative");
  if (!(delta_new > 0.0)) throw std::invalid_argument("delta_new must be positive");
  if (target_ratio && !(*target_ratio > 0.0 && *target_ratio < 1.0)) {
    throw std::invalid_argument("target ratio must lie in (0, 1)");
  }
}

namespace {

void check_lengths(std::span<const double> betas, std::span<const double> gammas,
                   const std::vector<bool>* selected) {
  if (betas.size() != gammas.size()) {
    throw std::invalid_argument("sparsity loss: " + std::to_string(betas.size()) + " betas but " +
                                std::to_string(gammas.size()) + " gammas");
  }
  if (selected && selected->size() != betas.size()) {
    throw std::invalid_argument("sparsity loss: selection length does not match channel count");
  }
}

double sign(double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); }

}  // namespace

SparsityTerm sparsity_loss(std::span<const double> betas, std::span<const double> gammas, double s,
                           const std::vector<bool>* selected) {
  check_lengths(betas, gammas, selected);
  SparsityTerm term{0.0, std::vector<double>(betas.size()), std::vector<double>(betas.size())};
  for (std::size_t j = 0; j < betas.size(); ++j) {
    if (selected && !(*selected)[j]) continue;
    term.value += betas[j] + s * std::abs(gammas[j]);
    term.d_beta[j] = 1.0;
    term.d_gamma[j] = s * sign(gammas[j]);
  }
  return term;
}

SparsityTerm sparsity_loss_norelu(std::span<const double> betas, std::span<const double> gammas, double s,
                                  const std::vector<bool>* selected) {
  check_lengths(betas, gammas, selected);
  SparsityTerm term{0.0, std::vector<double>(betas.size()), std::vector<double>(betas.size())};
  for (std::size_t j = 0; j < betas.size(); ++j) {
    if (selected && !(*selected)[j]) continue;
    const double width = s * std::abs(gammas[j]);
    const double upper = betas[j] + width;
    const double lower = betas[j] - width;
    term.value += std::abs(upper) + std::abs(lower);
    term.d_beta[j] = sign(upper) + sign(lower);
    term.d_gamma[j] = (sign(upper) - sign(lower)) * s * sign(gammas[j]);
  }
  return term;
}

SparsityTerm sparsity_term(std::span<const double> betas, std::span<const double> gammas,
                           const SparsityConfig& config, const std::vector<bool>* selected) {
  return config.variant == MaskVariant::with_relu ? sparsity_loss(betas, gammas, config.s, selected)
                                                  : sparsity_loss_norelu(betas, gammas, config.s, selected);
}

LossBreakdown total_loss(double classification, double sparsity, double lambda) {
  return {classification, sparsity, classification + lambda * sparsity};
}

std::vector<bool> select_top_channels(std::span<const double> channel_phis, double target_ratio) {
  if (channel_phis.empty()) throw std::invalid_argument("target ratio: empty channel list");
  if (!(target_ratio > 0.0 && target_ratio < 1.0)) {
    throw std::invalid_argument("target ratio must lie in (0, 1)");
  }
  const std::size_t total = channel_phis.size();
  // The slack keeps ratios like 0.7 * 10 from rounding up past an exact integer.
  const double exact = target_ratio * static_cast<double>(total);
  const auto wanted = std::min(total, static_cast<std::size_t>(std::ceil(exact - 1e-9 * exact)));
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return channel_phis[a] > channel_phis[b]; });
  std::vector<bool> selected(total, false);
  for (std::size_t i = 0; i < wanted; ++i) selected[order[i]] = true;
  return selected;
}

TargetRatioDecision target_ratio_step(std::span<const double> channel_phis, double target_ratio,
                                      double prev_sparsity, double current_sparsity) {
  TargetRatioDecision decision;
  decision.selected = select_top_channels(channel_phis, target_ratio);
  decision.update = current_sparsity > prev_sparsity ? UpdateKind::sparsity_only : UpdateKind::joint;
  return decision;
}

UpdateKind TargetRatioController::decide(double current_sparsity) {
  const auto kind = current_sparsity > prev_sparsity_ ? UpdateKind::sparsity_only : UpdateKind::joint;
  prev_sparsity_ = current_sparsity;
  return kind;
}

}  // namespace scp
