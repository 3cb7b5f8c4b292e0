#include "scp/masked_bn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace scp {

GumbelNoise::GumbelNoise(std::vector<std::pair<double, double>> frozen) : frozen_(std::move(frozen)) {
  if (frozen_.empty()) throw std::invalid_argument("frozen Gumbel noise table is empty");
}

std::pair<double, double> GumbelNoise::draw() {
  if (rng_) {
    const double g0 = rng_->gumbel();
    const double g1 = rng_->gumbel();
    return {g0, g1};
  }
  const auto pair = frozen_[cursor_];
  cursor_ = (cursor_ + 1) % frozen_.size();
  return pair;
}

template <std::floating_point T>
MaskedBnResult<T> masked_bn_forward(const BasicTensor<T>& input,
                                    std::span<const BNChannelState<T>> states,
                                    const MaskedBnSettings& settings, GumbelNoise* noise) {
  if (input.rank() != 4) throw ShapeError("masked BN: input must be NCHW, got " + shape_str(input.shape()));
  const std::size_t n = input.dim(0), channels = input.dim(1), plane = input.dim(2) * input.dim(3);
  if (states.size() != channels) {
    throw ShapeError("masked BN: " + std::to_string(states.size()) + " channel states for input with " +
                     std::to_string(channels) + " channels");
  }
  const bool training = settings.mode == BnMode::train;
  const std::size_t count = n * plane;
  if (training && count < 2) {
    throw std::domain_error("masked BN: batch variance undefined for N*H*W = " + std::to_string(count));
  }
  if (training && settings.masked && noise == nullptr) {
    throw std::invalid_argument("masked BN: training mode requires a Gumbel noise source");
  }

  MaskedBnResult<T> result;
  result.output = BasicTensor<T>(input.shape());
  auto& cache = result.cache;
  cache.settings = settings;
  cache.z = BasicTensor<T>(input.shape());
  cache.gamma.resize(channels);
  cache.beta.resize(channels);
  cache.inv_std.resize(channels);
  cache.masks.resize(channels);
  cache.dn_dbeta.assign(channels, T{0});
  cache.dn_dgamma.assign(channels, T{0});
  if (training) {
    result.batch_mean.resize(channels);
    result.batch_var.resize(channels);
  }

  const auto tau = static_cast<T>(settings.hyper.tau);
  for (std::size_t c = 0; c < channels; ++c) {
    const auto& s = states[c];
    T mean = s.running_mean;
    T var = s.running_var;
    if (training) {
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = input.data().data() + (i * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) acc += src[p];
      }
      const double m = acc / static_cast<double>(count);
      double sq = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = input.data().data() + (i * channels + c) * plane;
        for (std::size_t p = 0; p < plane; ++p) sq += (src[p] - m) * (src[p] - m);
      }
      mean = static_cast<T>(m);
      var = static_cast<T>(sq / static_cast<double>(count));
      result.batch_mean[c] = mean;
      result.batch_var[c] = static_cast<T>(sq / static_cast<double>(count - 1));
    }
    const T inv_std = T{1} / std::sqrt(var + s.eps);

    MaskActivation<T> act;
    if (settings.masked) {
      const auto prob = mask_probability(s.beta, s.gamma, settings.hyper, settings.criterion);
      act.phi = prob.value;
      const T q = soft_mask_q(prob.value, settings.hyper);
      if (training) {
        const auto [g0, g1] = noise->draw();
        act = gumbel_relax(q, tau, static_cast<T>(g0), static_cast<T>(g1));
        act.phi = prob.value;
        const T chain = d_n_d_q(act, tau) * d_q_d_phi(q, settings.hyper);
        cache.dn_dbeta[c] = chain * prob.d_beta;
        cache.dn_dgamma[c] = chain * prob.d_gamma;
      } else {
        act.q = q;
        act.pi0 = q;
        act.pi1 = T{1} - q;
        act.n = prob.value >= static_cast<T>(settings.hyper.c) ? T{0} : T{1};
      }
    }
    cache.masks[c] = act;
    cache.gamma[c] = s.gamma;
    cache.beta[c] = s.beta;
    cache.inv_std[c] = inv_std;

    const T multiplier = act.n;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t offset = (i * channels + c) * plane;
      const T* src = input.data().data() + offset;
      T* z = cache.z.data().data() + offset;
      T* dst = result.output.data().data() + offset;
      for (std::size_t p = 0; p < plane; ++p) {
        z[p] = (src[p] - mean) * inv_std;
        dst[p] = (s.gamma * z[p] + s.beta) * multiplier;
      }
    }
  }
  result.masks = cache.masks;
  return result;
}

template <std::floating_point T>
MaskedBnGrads<T> masked_bn_backward(const BasicTensor<T>& grad_output, const MaskedBnCache<T>& cache) {
  if (grad_output.shape() != cache.z.shape()) {
    throw ShapeError("masked BN backward: upstream gradient " + shape_str(grad_output.shape()) +
                     " does not match cached activations " + shape_str(cache.z.shape()));
  }
  const std::size_t n = cache.z.dim(0), channels = cache.z.dim(1), plane = cache.z.dim(2) * cache.z.dim(3);
  const std::size_t count = n * plane;
  const bool training = cache.settings.mode == BnMode::train;

  MaskedBnGrads<T> grads{BasicTensor<T>(cache.z.shape()), std::vector<T>(channels), std::vector<T>(channels)};
  for (std::size_t c = 0; c < channels; ++c) {
    const T gamma = cache.gamma[c];
    const T beta = cache.beta[c];
    const T multiplier = cache.masks[c].n;
    // sum dy, sum dy*z with dy = dout * multiplier, and sum dout * (gamma z + beta).
    double sum_dy = 0.0, sum_dy_z = 0.0, sum_dout_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t offset = (i * channels + c) * plane;
      const T* g = grad_output.data().data() + offset;
      const T* z = cache.z.data().data() + offset;
      for (std::size_t p = 0; p < plane; ++p) {
        const double dy = static_cast<double>(g[p]) * multiplier;
        sum_dy += dy;
        sum_dy_z += dy * z[p];
        sum_dout_y += static_cast<double>(g[p]) * (gamma * z[p] + beta);
      }
    }
    grads.beta[c] = static_cast<T>(sum_dy + sum_dout_y * cache.dn_dbeta[c]);
    grads.gamma[c] = static_cast<T>(sum_dy_z + sum_dout_y * cache.dn_dgamma[c]);

    const T scale = gamma * cache.inv_std[c];
    const auto mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
    const auto mean_dy_z = static_cast<T>(sum_dy_z / static_cast<double>(count));
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t offset = (i * channels + c) * plane;
      const T* g = grad_output.data().data() + offset;
      const T* z = cache.z.data().data() + offset;
      T* dx = grads.input.data().data() + offset;
      for (std::size_t p = 0; p < plane; ++p) {
        const T dy = g[p] * multiplier;
        dx[p] = training ? scale * (dy - mean_dy - z[p] * mean_dy_z) : scale * dy;
      }
    }
  }
  return grads;
}

template <std::floating_point T>
void update_running_stats(std::span<T> running_mean, std::span<T> running_var,
                          std::span<const T> batch_mean, std::span<const T> batch_var) {
  const auto keep = static_cast<T>(kRunningMomentum);
  for (std::size_t c = 0; c < running_mean.size(); ++c) {
    running_mean[c] = keep * running_mean[c] + (T{1} - keep) * batch_mean[c];
    running_var[c] = keep * running_var[c] + (T{1} - keep) * batch_var[c];
  }
}

template <std::floating_point T>
MaskedBnNode<T> masked_batch_norm(const Var<T>& input, const Var<T>& beta, const Var<T>& gamma,
                                  std::span<const T> running_mean, std::span<const T> running_var, T eps,
                                  const MaskedBnSettings& settings, GumbelNoise* noise) {
  const std::size_t channels = beta->value.size();
  if (gamma->value.size() != channels || running_mean.size() != channels || running_var.size() != channels) {
    throw ShapeError("masked BN: parameter and statistic lengths disagree");
  }
  std::vector<BNChannelState<T>> states(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    states[c] = {beta->value[c], gamma->value[c], running_mean[c], running_var[c], eps};
  }
  auto result = masked_bn_forward<T>(input->value, states, settings, noise);
  MaskedBnNode<T> node;
  node.masks = result.masks;
  node.batch_mean = std::move(result.batch_mean);
  node.batch_var = std::move(result.batch_var);
  node.output = make_node<T>(
      settings.masked ? "masked_bn" : "batch_norm", std::move(result.output), {input, beta, gamma},
      [cache = std::move(result.cache)](Node<T>& self) {
        auto grads = masked_bn_backward(self.grad, cache);
        auto& x = self.parents[0];
        auto& b = self.parents[1];
        auto& g = self.parents[2];
        if (x->requires_grad) {
          auto& gx = x->grad_buffer();
          for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += grads.input[i];
        }
        if (b->requires_grad) {
          auto& gb = b->grad_buffer();
          for (std::size_t c = 0; c < gb.size(); ++c) gb[c] += grads.beta[c];
        }
        if (g->requires_grad) {
          auto& gg = g->grad_buffer();
          for (std::size_t c = 0; c < gg.size(); ++c) gg[c] += grads.gamma[c];
        }
      });
  return node;
}

#define SCP_INSTANTIATE(T)                                                                                   \
  template MaskedBnResult<T> masked_bn_forward<T>(const BasicTensor<T>&, std::span<const BNChannelState<T>>, \
                                                  const MaskedBnSettings&, GumbelNoise*);                   \
  template MaskedBnGrads<T> masked_bn_backward<T>(const BasicTensor<T>&, const MaskedBnCache<T>&);           \
  template void update_running_stats<T>(std::span<T>, std::span<T>, std::span<const T>, std::span<const T>); \
  template MaskedBnNode<T> masked_batch_norm<T>(const Var<T>&, const Var<T>&, const Var<T>&,                 \
                                                std::span<const T>, std::span<const T>, T,                  \
                                                const MaskedBnSettings&, GumbelNoise*);

SCP_INSTANTIATE(float)
SCP_INSTANTIATE(double)
#undef SCP_INSTANTIATE

}  // namespace scp
