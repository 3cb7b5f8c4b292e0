#ifndef SCP_MASK_HPP_
#define SCP_MASK_HPP_

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "scp/random.hpp"

namespace scp {

/// |gamma| is clamped to at least this value wherever it divides.
inline constexpr double kGammaFloor = 1e-8;

/// Probability clamp applied before taking log(pi) in the Gumbel relaxation.
inline constexpr double kProbClamp = 1e-7;

struct MaskHyperParams {
  double delta = 0.05;  // activation threshold on the post-BN distribution
  double c = 0.8;       // prune iff the mask probability reaches c
  double k = 20.0;      // logistic steepness
  double tau = 0.5;     // Gumbel-Softmax temperature

  void validate() const {
    if (!(c > 0.0 && c < 1.0)) throw std::invalid_argument("mask cutoff c must lie in (0, 1)");
    if (!(k > 0.0)) throw std::invalid_argument("logistic steepness k must be positive");
    if (!(tau > 0.0)) throw std::invalid_argument("Gumbel temperature tau must be positive");
  }
};

/**
 * Which event the mask probability measures.
 *
 * with_relu: P(x_out <= delta), the channel is mostly zeroed by the ReLU.
 * no_relu:   P(-delta_new <= x_out <= delta_new), the channel is mostly
 *            near zero regardless of sign (BN-only criterion).
 */
enum class MaskVariant { with_relu, no_relu };

struct MaskCriterion {
  MaskVariant variant = MaskVariant::with_relu;
  double delta_new = 0.05;
};

template <std::floating_point T>
T floored_abs(T gamma) {
  return std::max(std::abs(gamma), static_cast<T>(kGammaFloor));
}

/// sign(gamma), with sign(0) = 0.
template <std::floating_point T>
T sign_of(T value) {
  return static_cast<T>((value > T{0}) - (value < T{0}));
}

/// Density of N(beta, gamma^2) at t.
template <std::floating_point T>
T gaussian_pdf(T t, T beta, T gamma) {
  const T sd = floored_abs(gamma);
  const T u = (t - beta) / sd;
  return std::exp(T{-0.5} * u * u) / (sd * std::sqrt(T{2} * std::numbers::pi_v<T>));
}

/// CDF of N(beta, gamma^2) at delta, via the C library erfc (relative error
/// within a few ulp, so far below 1e-7 absolute on [0, 1]).
template <std::floating_point T>
T gaussian_cdf(T delta, T beta, T gamma) {
  const T u = (delta - beta) / floored_abs(gamma);
  return T{0.5} * std::erfc(-u / std::numbers::sqrt2_v<T>);
}

template <std::floating_point T>
T soft_mask_q(T phi, const MaskHyperParams& hyper) {
  const T a = static_cast<T>(hyper.k) * (phi - static_cast<T>(hyper.c));
  return T{1} / (T{1} + std::exp(-a));
}

template <std::floating_point T>
T d_q_d_phi(T q, const MaskHyperParams& hyper) {
  return static_cast<T>(hyper.k) * q * (T{1} - q);
}

/// Mask probability and its partials w.r.t. the BN affine parameters.
template <std::floating_point T>
struct MaskProbability {
  T value;
  T d_beta;
  T d_gamma;
};

template <std::floating_point T>
MaskProbability<T> mask_probability(T beta, T gamma, const MaskHyperParams& hyper,
                                    const MaskCriterion& criterion = {}) {
  const T sd = floored_abs(gamma);
  const T dsd = sign_of(gamma);
  if (criterion.variant == MaskVariant::with_relu) {
    const T delta = static_cast<T>(hyper.delta);
    const T f = gaussian_pdf(delta, beta, gamma);
    return {gaussian_cdf(delta, beta, gamma), -f, -f * (delta - beta) / sd * dsd};
  }
  const T hi = static_cast<T>(criterion.delta_new);
  const T lo = -hi;
  const T f_hi = gaussian_pdf(hi, beta, gamma);
  const T f_lo = gaussian_pdf(lo, beta, gamma);
  return {gaussian_cdf(hi, beta, gamma) - gaussian_cdf(lo, beta, gamma), f_lo - f_hi,
          (-f_hi * (hi - beta) + f_lo * (lo - beta)) / sd * dsd};
}

/// P(-delta_new <= x_out <= delta_new) for x_out ~ N(beta, gamma^2).
template <std::floating_point T>
T norelu_mask_prob(T beta, T gamma, T delta_new) {
  if (!(delta_new > T{0})) throw std::invalid_argument("delta_new must be positive");
  return gaussian_cdf(delta_new, beta, gamma) - gaussian_cdf(-delta_new, beta, gamma);
}

/// Hard test-time mask: 0 (prune) iff the mask probability reaches c.
template <std::floating_point T>
int hard_mask(T beta, T gamma, const MaskHyperParams& hyper, const MaskCriterion& criterion = {}) {
  return mask_probability(beta, gamma, hyper, criterion).value >= static_cast<T>(hyper.c) ? 0 : 1;
}

/// Everything the relaxed mask computed for one channel in one forward pass.
template <std::floating_point T>
struct MaskActivation {
  T phi = 0;  // mask probability
  T q = 0;
  T pi0 = 0;  // prune probability, equals q
  T pi1 = 0;  // keep probability, equals 1 - q
  T g0 = 0;
  T g1 = 0;
  T n = 1;    // relaxed keep sample
};

/**
 * Two-class Gumbel-Softmax with explicit noise. The softmax over
 * (log pi1 + g1, log pi0 + g0) / tau is evaluated as a logistic of the
 * difference, which cannot overflow. n is kept strictly inside (0, 1).
 */
template <std::floating_point T>
MaskActivation<T> gumbel_relax(T q, T tau, T g0, T g1) {
  if (!(tau > T{0})) throw std::invalid_argument("Gumbel temperature must be positive");
  MaskActivation<T> act;
  act.q = q;
  const T qc = std::clamp(q, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
  act.pi0 = q;
  act.pi1 = T{1} - q;
  act.g0 = g0;
  act.g1 = g1;
  const T a = ((std::log(T{1} - qc) + g1) - (std::log(qc) + g0)) / tau;
  const T n = a >= T{0} ? T{1} / (T{1} + std::exp(-a)) : std::exp(a) / (T{1} + std::exp(a));
  act.n = std::clamp(n, std::numeric_limits<T>::min(), std::nextafter(T{1}, T{0}));
  return act;
}

template <std::floating_point T>
MaskActivation<T> gumbel_keep_sample(T q, T tau, Rng& rng) {
  const auto g0 = static_cast<T>(rng.gumbel());
  const auto g1 = static_cast<T>(rng.gumbel());
  return gumbel_relax(q, tau, g0, g1);
}

/// d n / d q for the relaxed sample.
template <std::floating_point T>
T d_n_d_q(const MaskActivation<T>& act, T tau) {
  const T qc = std::clamp(act.q, static_cast<T>(kProbClamp), static_cast<T>(1.0 - kProbClamp));
  return -act.n * (T{1} - act.n) / (tau * qc * (T{1} - qc));
}

}  // namespace scp

#endif  // SCP_MASK_HPP_
