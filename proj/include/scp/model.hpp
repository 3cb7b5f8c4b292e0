#ifndef SCP_MODEL_HPP_
#define SCP_MODEL_HPP_

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "scp/autograd.hpp"
#include "scp/mask.hpp"
#include "scp/masked_bn.hpp"
#include "scp/optimizer.hpp"
#include "scp/random.hpp"
#include "scp/tensor.hpp"

namespace scp {

template <std::floating_point T>
struct Conv2dLayer {
  BasicTensor<T> weight;  // [C_out, C_in, kH, kW], no bias (a BN follows)
  std::size_t stride = 1;
  std::size_t padding = 1;
};

template <std::floating_point T>
struct BatchNormLayer {
  BasicTensor<T> beta;
  BasicTensor<T> gamma;
  std::vector<T> running_mean;
  std::vector<T> running_var;
  T eps = static_cast<T>(kDefaultBnEps);
  bool masked = true;

  std::size_t channels() const { return beta.size(); }
  BNChannelState<T> state(std::size_t c) const {
    return {beta[c], gamma[c], running_mean[c], running_var[c], eps};
  }
};

struct ReluLayer {};

struct AvgPoolLayer {
  std::size_t kernel = 2;
};

struct FlattenLayer {};

template <std::floating_point T>
struct DenseLayer {
  BasicTensor<T> weight;  // [D_out, D_in]
  BasicTensor<T> bias;    // [D_out]
};

template <std::floating_point T>
using Layer = std::variant<Conv2dLayer<T>, BatchNormLayer<T>, ReluLayer, AvgPoolLayer, FlattenLayer, DenseLayer<T>>;

template <std::floating_point T>
struct ParamRef {
  BasicTensor<T>* tensor;
  ParamKind kind;
  std::string name;
};

/**
 * A strictly feedforward chain of layers. Every masked BN must be directly
 * followed by a ReLU; the mask rule (hyper-parameters and criterion) is
 * part of the model because it decides the eval-mode output.
 */
template <std::floating_point T>
struct BasicModel {
  std::string architecture;
  Shape input_shape;  // [C, H, W]
  std::size_t num_classes = 0;
  MaskHyperParams hyper;
  MaskCriterion criterion;
  std::vector<Layer<T>> layers;

  /// Throws std::invalid_argument on a malformed chain.
  void validate() const;

  std::vector<ParamRef<T>> parameters();
  std::vector<std::size_t> bn_layer_indices() const;
  std::size_t masked_channel_count() const;

  template <std::floating_point U>
  BasicModel<U> cast() const;
};

using Model = BasicModel<float>;
using ModelD = BasicModel<double>;

/// [conv3x3(16)-BN*-ReLU-avgpool2] x 3 -> flatten -> dense(num_classes).
Model make_convnet_s(const Shape& input_shape, std::size_t num_classes, Rng& rng, std::size_t width = 16);

/// Six conv3x3-BN*-ReLU blocks with widths 32-32-64-64-128-128, an average
/// pool after every second block, then flatten -> dense.
Model make_vgg_mini(const Shape& input_shape, std::size_t num_classes, Rng& rng);

Model make_architecture(const std::string& name, const Shape& input_shape, std::size_t num_classes, Rng& rng);

/// Graph-free eval-mode forward: running statistics and hard masks.
template <std::floating_point T>
BasicTensor<T> infer(const BasicModel<T>& model, const BasicTensor<T>& input);

template <std::floating_point T>
struct TrainForward {
  Var<T> logits;
  std::vector<Var<T>> params;  // leaves in parameters() order
  std::vector<std::vector<MaskActivation<T>>> masks;  // per BN layer
};

/**
 * Builds the training graph: batch statistics and relaxed Gumbel masks.
 * When `update_running` is set the model's running statistics absorb this
 * batch.
 */
template <std::floating_point T>
TrainForward<T> forward_train(BasicModel<T>& model, const BasicTensor<T>& input, GumbelNoise& noise,
                              bool update_running = true);

/// Mask probability of every channel of every masked BN layer, flattened in
/// (layer, channel) order.
template <std::floating_point T>
std::vector<double> channel_mask_probabilities(const BasicModel<T>& model);

/// Flattened beta / gamma of every masked BN layer, matching the above.
template <std::floating_point T>
void masked_affine_parameters(const BasicModel<T>& model, std::vector<double>& betas, std::vector<double>& gammas);

}  // namespace scp

#endif  // SCP_MODEL_HPP_
