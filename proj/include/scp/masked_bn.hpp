#ifndef SCP_MASKED_BN_HPP_
#define SCP_MASKED_BN_HPP_

#include <span>
#include <utility>
#include <vector>

#include "scp/autograd.hpp"
#include "scp/mask.hpp"
#include "scp/random.hpp"
#include "scp/tensor.hpp"

namespace scp {

/// Running statistics follow new = momentum * old + (1 - momentum) * batch.
inline constexpr double kRunningMomentum = 0.9;
inline constexpr double kDefaultBnEps = 1e-5;

template <std::floating_point T>
struct BNChannelState {
  T beta = 0;
  T gamma = 1;
  T running_mean = 0;
  T running_var = 1;
  T eps = static_cast<T>(kDefaultBnEps);
};

enum class BnMode { train, eval };

/**
 * Source of the per-channel Gumbel pair (g0, g1). Either drawn from an Rng
 * or replayed cyclically from a fixed table, which makes the training-mode
 * layer a deterministic function of its inputs for finite-difference
 * checks. A table covering every masked channel of a model replays the same
 * noise on each forward pass.
 */
class GumbelNoise {
 public:
  explicit GumbelNoise(Rng& rng) : rng_(&rng) {}
  explicit GumbelNoise(std::vector<std::pair<double, double>> frozen);

  std::pair<double, double> draw();

 private:
  Rng* rng_ = nullptr;
  std::vector<std::pair<double, double>> frozen_;
  std::size_t cursor_ = 0;
};

struct MaskedBnSettings {
  MaskHyperParams hyper;
  MaskCriterion criterion;
  BnMode mode = BnMode::train;
  bool masked = true;  // false: plain BN, multiplier fixed at 1
};

template <std::floating_point T>
struct MaskedBnCache {
  MaskedBnSettings settings;
  BasicTensor<T> z;
  std::vector<T> gamma;
  std::vector<T> beta;
  std::vector<T> inv_std;
  std::vector<MaskActivation<T>> masks;
  std::vector<T> dn_dbeta;   // zero unless training a masked layer
  std::vector<T> dn_dgamma;
};

template <std::floating_point T>
struct MaskedBnResult {
  BasicTensor<T> output;
  std::vector<MaskActivation<T>> masks;
  std::vector<T> batch_mean;  // empty in eval mode
  std::vector<T> batch_var;   // unbiased; feeds the running estimate
  MaskedBnCache<T> cache;
};

template <std::floating_point T>
struct MaskedBnGrads {
  BasicTensor<T> input;
  std::vector<T> beta;
  std::vector<T> gamma;
};

/**
 * x_out = (gamma * z + beta) * multiplier, per channel of an NCHW tensor.
 *
 * train: z uses batch statistics; multiplier is a relaxed Gumbel sample n,
 *        one per channel per call.
 * eval:  z uses the running statistics; multiplier is the hard mask.
 *
 * Running statistics are not modified here; see update_running_stats.
 */
template <std::floating_point T>
MaskedBnResult<T> masked_bn_forward(const BasicTensor<T>& input,
                                    std::span<const BNChannelState<T>> states,
                                    const MaskedBnSettings& settings, GumbelNoise* noise);

template <std::floating_point T>
MaskedBnGrads<T> masked_bn_backward(const BasicTensor<T>& grad_output, const MaskedBnCache<T>& cache);

template <std::floating_point T>
void update_running_stats(std::span<T> running_mean, std::span<T> running_var,
                          std::span<const T> batch_mean, std::span<const T> batch_var);

template <std::floating_point T>
struct MaskedBnNode {
  Var<T> output;
  std::vector<MaskActivation<T>> masks;
  std::vector<T> batch_mean;
  std::vector<T> batch_var;
};

/// Graph op wrapping masked_bn_forward/backward; beta and gamma are [C].
template <std::floating_point T>
MaskedBnNode<T> masked_batch_norm(const Var<T>& input, const Var<T>& beta, const Var<T>& gamma,
                                  std::span<const T> running_mean, std::span<const T> running_var, T eps,
                                  const MaskedBnSettings& settings, GumbelNoise* noise);

}  // namespace scp

#endif  // SCP_MASKED_BN_HPP_
