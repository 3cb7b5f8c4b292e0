#include "scp/optimizer.hpp"

#include <stdexcept>
#include <string>

namespace scp {

const char* to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::conv_weight: return "conv_weight";
    case ParamKind::dense_weight: return "dense_weight";
    case ParamKind::dense_bias: return "dense_bias";
    case ParamKind::bn_beta: return "bn_beta";
    case ParamKind::bn_gamma: return "bn_gamma";
  }
  return "unknown";
}

double LrSchedule::at(std::size_t epoch) const {
  double lr = initial;
  for (auto boundary : decay_epochs) {
    if (epoch >= boundary) lr /= factor;
  }
  return lr;
}

SgdNesterov::SgdNesterov(double momentum, double weight_decay)
    : momentum_(momentum), weight_decay_(weight_decay) {
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (weight_decay < 0.0) throw std::invalid_argument("weight decay must be non-negative");
}

void SgdNesterov::step(std::span<const ParamSlot> params, double learning_rate) {
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("learning rate must be positive, got " + std::to_string(learning_rate));
  }
  if (velocities_.empty()) {
    for (const auto& p : params) velocities_.emplace_back(p.value->shape());
  }
  if (velocities_.size() != params.size()) {
    throw ShapeError("optimizer: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(velocities_.size()) + " velocity buffers");
  }
  const auto mu = static_cast<float>(momentum_);
  const auto lr = static_cast<float>(learning_rate);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i].value;
    const Tensor& grad = *params[i].grad;
    Tensor& v = velocities_[i];
    if (w.shape() != grad.shape() || w.shape() != v.shape()) {
      throw ShapeError("optimizer: parameter " + std::to_string(i) + " shape " + shape_str(w.shape()) +
                       " does not match gradient " + shape_str(grad.shape()) + " / velocity " +
                       shape_str(v.shape()));
    }
    const float decay = takes_weight_decay(params[i].kind) ? static_cast<float>(weight_decay_) : 0.0f;
    for (std::size_t j = 0; j < w.size(); ++j) {
      const float g = grad[j] + decay * w[j];
      v[j] = mu * v[j] + g;
      w[j] -= lr * (g + mu * v[j]);
    }
  }
}

}  // namespace scp
