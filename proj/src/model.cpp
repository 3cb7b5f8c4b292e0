#include "scp/model.hpp"

#include <cmath>
#include <stdexcept>
#include <type_traits>

#include "scp/ops.hpp"

namespace scp {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

template <std::floating_point T>
BasicTensor<T> he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  BasicTensor<T> t(std::move(shape));
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.storage()) v = static_cast<T>(rng.normal() * sd);
  return t;
}

Conv2dLayer<float> conv3x3(std::size_t c_in, std::size_t c_out, Rng& rng) {
  return {he_normal<float>({c_out, c_in, 3, 3}, c_in * 9, rng), 1, 1};
}

BatchNormLayer<float> masked_bn(std::size_t channels) {
  BatchNormLayer<float> bn;
  bn.beta = Tensor({channels}, 0.0f);
  bn.gamma = Tensor({channels}, 1.0f);
  bn.running_mean.assign(channels, 0.0f);
  bn.running_var.assign(channels, 1.0f);
  return bn;
}

DenseLayer<float> dense_layer(std::size_t d_in, std::size_t d_out, Rng& rng) {
  return {he_normal<float>({d_out, d_in}, d_in, rng), Tensor({d_out}, 0.0f)};
}

}  // namespace

template <std::floating_point T>
void BasicModel<T>::validate() const {
  if (input_shape.size() != 3) throw std::invalid_argument("model input shape must be [C,H,W]");
  std::size_t c = input_shape[0], h = input_shape[1], w = input_shape[2];
  std::size_t flat = 0;
  bool is_flat = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string where = "layer " + std::to_string(i) + ": ";
    std::visit(overloaded{
                   [&](const Conv2dLayer<T>& conv) {
                     if (is_flat) throw std::invalid_argument(where + "conv after flatten");
                     if (conv.weight.rank() != 4 || conv.weight.dim(1) != c) {
                       throw std::invalid_argument(where + "conv weight " + shape_str(conv.weight.shape()) +
                                                   " does not accept " + std::to_string(c) + " channels");
                     }
                     const std::size_t ph = h + 2 * conv.padding, pw = w + 2 * conv.padding;
                     if (conv.weight.dim(2) > ph || conv.weight.dim(3) > pw || conv.stride == 0) {
                       throw std::invalid_argument(where + "conv kernel does not fit its input");
                     }
                     h = (ph - conv.weight.dim(2)) / conv.stride + 1;
                     w = (pw - conv.weight.dim(3)) / conv.stride + 1;
                     c = conv.weight.dim(0);
                   },
                   [&](const BatchNormLayer<T>& bn) {
                     if (is_flat || bn.channels() != c || bn.gamma.size() != c || bn.running_mean.size() != c ||
                         bn.running_var.size() != c) {
                       throw std::invalid_argument(where + "BN width does not match " + std::to_string(c) +
                                                   " channels");
                     }
                     if (bn.masked &&
                         (i + 1 >= layers.size() || !std::holds_alternative<ReluLayer>(layers[i + 1]))) {
                       throw std::invalid_argument(where + "masked BN must be followed by a ReLU");
                     }
                   },
                   [&](const ReluLayer&) {},
                   [&](const AvgPoolLayer& pool) {
                     if (is_flat || pool.kernel == 0 || pool.kernel > h || pool.kernel > w) {
                       throw std::invalid_argument(where + "pool kernel does not fit its input");
                     }
                     h /= pool.kernel;
                     w /= pool.kernel;
                   },
                   [&](const FlattenLayer&) {
                     if (is_flat) throw std::invalid_argument(where + "double flatten");
                     is_flat = true;
                     flat = c * h * w;
                   },
                   [&](const DenseLayer<T>& dense) {
                     if (!is_flat) throw std::invalid_argument(where + "dense before flatten");
                     if (dense.weight.rank() != 2 || dense.weight.dim(1) != flat ||
                         dense.bias.size() != dense.weight.dim(0)) {
                       throw std::invalid_argument(where + "dense weight " + shape_str(dense.weight.shape()) +
                                                   " does not accept width " + std::to_string(flat));
                     }
                     flat = dense.weight.dim(0);
                   },
               },
               layers[i]);
  }
  if (!is_flat || flat != num_classes) {
    throw std::invalid_argument("model must end in a dense layer with " + std::to_string(num_classes) + " outputs");
  }
}

template <std::floating_point T>
std::vector<ParamRef<T>> BasicModel<T>::parameters() {
  std::vector<ParamRef<T>> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i) + ".";
    std::visit(overloaded{
                   [&](Conv2dLayer<T>& conv) { out.push_back({&conv.weight, ParamKind::conv_weight, prefix + "weight"}); },
                   [&](BatchNormLayer<T>& bn) {
                     out.push_back({&bn.beta, ParamKind::bn_beta, prefix + "beta"});
                     out.push_back({&bn.gamma, ParamKind::bn_gamma, prefix + "gamma"});
                   },
                   [&](DenseLayer<T>& dense) {
                     out.push_back({&dense.weight, ParamKind::dense_weight, prefix + "weight"});
                     out.push_back({&dense.bias, ParamKind::dense_bias, prefix + "bias"});
                   },
                   [](auto&) {},
               },
               layers[i]);
  }
  return out;
}

template <std::floating_point T>
std::vector<std::size_t> BasicModel<T>::bn_layer_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (std::holds_alternative<BatchNormLayer<T>>(layers[i])) out.push_back(i);
  }
  return out;
}

template <std::floating_point T>
std::size_t BasicModel<T>::masked_channel_count() const {
  std::size_t total = 0;
  for (auto i : bn_layer_indices()) {
    const auto& bn = std::get<BatchNormLayer<T>>(layers[i]);
    if (bn.masked) total += bn.channels();
  }
  return total;
}

template <std::floating_point T>
template <std::floating_point U>
BasicModel<U> BasicModel<T>::cast() const {
  BasicModel<U> out;
  out.architecture = architecture;
  out.input_shape = input_shape;
  out.num_classes = num_classes;
  out.hyper = hyper;
  out.criterion = criterion;
  for (const auto& layer : layers) {
    std::visit(overloaded{
                   [&](const Conv2dLayer<T>& l) {
                     out.layers.emplace_back(Conv2dLayer<U>{l.weight.template cast<U>(), l.stride, l.padding});
                   },
                   [&](const BatchNormLayer<T>& l) {
                     out.layers.emplace_back(BatchNormLayer<U>{
                         l.beta.template cast<U>(), l.gamma.template cast<U>(),
                         std::vector<U>(l.running_mean.begin(), l.running_mean.end()),
                         std::vector<U>(l.running_var.begin(), l.running_var.end()), static_cast<U>(l.eps), l.masked});
                   },
                   [&](const DenseLayer<T>& l) {
                     out.layers.emplace_back(DenseLayer<U>{l.weight.template cast<U>(), l.bias.template cast<U>()});
                   },
                   [&](const auto& l) { out.layers.emplace_back(l); },
               },
               layer);
  }
  return out;
}

Model make_convnet_s(const Shape& input_shape, std::size_t num_classes, Rng& rng, std::size_t width) {
  Model m;
  m.architecture = "convnet-s";
  m.input_shape = input_shape;
  m.num_classes = num_classes;
  std::size_t c = input_shape.at(0), h = input_shape.at(1), w = input_shape.at(2);
  for (int block = 0; block < 3; ++block) {
    m.layers.emplace_back(conv3x3(c, width, rng));
    m.layers.emplace_back(masked_bn(width));
    m.layers.emplace_back(ReluLayer{});
    m.layers.emplace_back(AvgPoolLayer{2});
    c = width;
    h /= 2;
    w /= 2;
  }
  m.layers.emplace_back(FlattenLayer{});
  m.layers.emplace_back(dense_layer(c * h * w, num_classes, rng));
  m.validate();
  return m;
}

Model make_vgg_mini(const Shape& input_shape, std::size_t num_classes, Rng& rng) {
  Model m;
  m.architecture = "vgg-mini";
  m.input_shape = input_shape;
  m.num_classes = num_classes;
  std::size_t c = input_shape.at(0), h = input_shape.at(1), w = input_shape.at(2);
  const std::size_t widths[] = {32, 32, 64, 64, 128, 128};
  for (std::size_t i = 0; i < 6; ++i) {
    m.layers.emplace_back(conv3x3(c, widths[i], rng));
    m.layers.emplace_back(masked_bn(widths[i]));
    m.layers.emplace_back(ReluLayer{});
    c = widths[i];
    if (i % 2 == 1) {
      m.layers.emplace_back(AvgPoolLayer{2});
      h /= 2;
      w /= 2;
    }
  }
  m.layers.emplace_back(FlattenLayer{});
  m.layers.emplace_back(dense_layer(c * h * w, num_classes, rng));
  m.validate();
  return m;
}

Model make_architecture(const std::string& name, const Shape& input_shape, std::size_t num_classes, Rng& rng) {
  if (name == "convnet-s") return make_convnet_s(input_shape, num_classes, rng);
  if (name == "vgg-mini") return make_vgg_mini(input_shape, num_classes, rng);
  throw std::invalid_argument("unknown architecture '" + name + "' (expected convnet-s or vgg-mini)");
}

template <std::floating_point T>
BasicTensor<T> infer(const BasicModel<T>& model, const BasicTensor<T>& input) {
  BasicTensor<T> x = input;
  MaskedBnSettings settings{model.hyper, model.criterion, BnMode::eval, true};
  for (const auto& layer : model.layers) {
    x = std::visit(overloaded{
                       [&](const Conv2dLayer<T>& conv) {
                         return conv2d_forward(x, conv.weight, {conv.stride, conv.padding});
                       },
                       [&](const BatchNormLayer<T>& bn) {
                         std::vector<BNChannelState<T>> states(bn.channels());
                         for (std::size_t c = 0; c < states.size(); ++c) states[c] = bn.state(c);
                         settings.masked = bn.masked;
                         return masked_bn_forward<T>(x, states, settings, nullptr).output;
                       },
                       [&](const ReluLayer&) { return relu_forward(x); },
                       [&](const AvgPoolLayer& pool) { return avg_pool_forward(x, pool.kernel); },
                       [&](const FlattenLayer&) { return x.reshaped({x.dim(0), x.size() / x.dim(0)}); },
                       [&](const DenseLayer<T>& dense) { return dense_forward(x, dense.weight, dense.bias); },
                   },
                   layer);
  }
  return x;
}

template <std::floating_point T>
TrainForward<T> forward_train(BasicModel<T>& model, const BasicTensor<T>& input, GumbelNoise& noise,
                              bool update_running) {
  TrainForward<T> out;
  for (auto& p : model.parameters()) out.params.push_back(parameter(*p.tensor));
  std::size_t next_param = 0;
  Var<T> x = constant(input);
  MaskedBnSettings settings{model.hyper, model.criterion, BnMode::train, true};
  for (auto& layer : model.layers) {
    x = std::visit(overloaded{
                       [&](Conv2dLayer<T>& conv) {
                         return conv2d(x, out.params[next_param++], {conv.stride, conv.padding});
                       },
                       [&](BatchNormLayer<T>& bn) {
                         auto& beta = out.params[next_param++];
                         auto& gamma = out.params[next_param++];
                         settings.masked = bn.masked;
                         auto node = masked_batch_norm<T>(x, beta, gamma, bn.running_mean, bn.running_var, bn.eps,
                                                          settings, &noise);
                         if (update_running) {
                           update_running_stats<T>(bn.running_mean, bn.running_var, node.batch_mean,
                                                   node.batch_var);
                         }
                         out.masks.push_back(std::move(node.masks));
                         return node.output;
                       },
                       [&](ReluLayer&) { return relu(x); },
                       [&](AvgPoolLayer& pool) { return avg_pool(x, pool.kernel); },
                       [&](FlattenLayer&) { return flatten(x); },
                       [&](DenseLayer<T>&) {
                         auto& w = out.params[next_param++];
                         auto& b = out.params[next_param++];
                         return dense(x, w, b);
                       },
                   },
                   layer);
  }
  out.logits = x;
  return out;
}

template <std::floating_point T>
std::vector<double> channel_mask_probabilities(const BasicModel<T>& model) {
  std::vector<double> phis;
  for (auto i : model.bn_layer_indices()) {
    const auto& bn = std::get<BatchNormLayer<T>>(model.layers[i]);
    if (!bn.masked) continue;
    for (std::size_t c = 0; c < bn.channels(); ++c) {
      phis.push_back(static_cast<double>(
          mask_probability(static_cast<double>(bn.beta[c]), static_cast<double>(bn.gamma[c]), model.hyper,
                           model.criterion)
              .value));
    }
  }
  return phis;
}

template <std::floating_point T>
void masked_affine_parameters(const BasicModel<T>& model, std::vector<double>& betas, std::vector<double>& gammas) {
  betas.clear();
  gammas.clear();
  for (auto i : model.bn_layer_indices()) {
    const auto& bn = std::get<BatchNormLayer<T>>(model.layers[i]);
    if (!bn.masked) continue;
    for (std::size_t c = 0; c < bn.channels(); ++c) {
      betas.push_back(bn.beta[c]);
      gammas.push_back(bn.gamma[c]);
    }
  }
}

template struct BasicModel<float>;
template struct BasicModel<double>;
template BasicModel<double> BasicModel<float>::cast<double>() const;
template BasicModel<float> BasicModel<double>::cast<float>() const;
template BasicModel<float> BasicModel<float>::cast<float>() const;
template BasicModel<double> BasicModel<double>::cast<double>() const;

#define SCP_INSTANTIATE(T)                                                                                     \
  template BasicTensor<T> infer<T>(const BasicModel<T>&, const BasicTensor<T>&);                               \
  template TrainForward<T> forward_train<T>(BasicModel<T>&, const BasicTensor<T>&, GumbelNoise&, bool);        \
  template std::vector<double> channel_mask_probabilities<T>(const BasicModel<T>&);                            \
  template void masked_affine_parameters<T>(const BasicModel<T>&, std::vector<double>&, std::vector<double>&);

SCP_INSTANTIATE(float)
SCP_INSTANTIATE(double)
#undef SCP_INSTANTIATE

}  // namespace scp
