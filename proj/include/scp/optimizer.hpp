#ifndef SCP_OPTIMIZER_HPP_
#define SCP_OPTIMIZER_HPP_

#include <cstddef>
#include <span>
#include <vector>

#include "scp/tensor.hpp"

namespace scp {

enum class ParamKind { conv_weight, dense_weight, dense_bias, bn_beta, bn_gamma };

/// Weight decay applies to convolution and dense weights only. BN affine
/// parameters are regularized by the sparsity loss instead.
constexpr bool takes_weight_decay(ParamKind kind) {
  return kind == ParamKind::conv_weight || kind == ParamKind::dense_weight;
}

const char* to_string(ParamKind kind);

/// Step schedule: the rate is divided by `factor` at each listed epoch.
struct LrSchedule {
  double initial = 0.1;
  std::vector<std::size_t> decay_epochs;
  double factor = 10.0;

  /// Learning rate in effect during the (zero-based) epoch.
  double at(std::size_t epoch) const;
};

struct ParamSlot {
  Tensor* value;
  const Tensor* grad;
  ParamKind kind;
};

/**
 * SGD with Nesterov momentum, in the accumulator form
 *
 *   g     = grad + weight_decay * w     (decayed kinds only)
 *   v     = momentum * v + g
 *   w    -= lr * (g + momentum * v)
 *
 * Velocity buffers are created on the first step and keyed by slot order.
 */
class SgdNesterov {
 public:
  explicit SgdNesterov(double momentum = 0.9, double weight_decay = 1e-4);

  void step(std::span<const ParamSlot> params, double learning_rate);

  double momentum() const { return momentum_; }
  double weight_decay() const { return weight_decay_; }
  const std::vector<Tensor>& velocities() const { return velocities_; }
  void set_velocities(std::vector<Tensor> velocities) { velocities_ = std::move(velocities); }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocities_;
};

}  // namespace scp

#endif  // SCP_OPTIMIZER_HPP_
