#ifndef SCP_RANDOM_HPP_
#define SCP_RANDOM_HPP_

#include <cstdint>
#include <random>
#include <vector>

namespace scp {

/**
 * The single seeded generator behind initialization, shuffling and Gumbel
 * noise. The engine is std::mt19937_64; every derived variate is computed
 * here from raw 64-bit draws instead of through std::*_distribution, whose
 * algorithms are implementation-defined. A fixed seed therefore reproduces
 * the same stream on any conforming standard library.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal();

  /// Gumbel(0,1) as -log(-log(u)), u clamped to [1e-12, 1 - 1e-12].
  double gumbel();

  /// Uniform integer in [0, n) by rejection.
  std::uint64_t below(std::uint64_t n);

  /// Fisher-Yates permutation of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace scp

#endif  // SCP_RANDOM_HPP_
