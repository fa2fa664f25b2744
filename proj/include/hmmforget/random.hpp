#ifndef HMMFORGET_RANDOM_HPP_
#define HMMFORGET_RANDOM_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace hmmforget {

/// Seeded random source used by every stochastic component.
///
/// The engine is std::mt19937_64 (its output sequence is fixed by the C++
/// standard) seeded through splitmix64. Uniform, integer and normal variates
/// are derived here rather than through <random> distributions, whose
/// algorithms differ between standard library implementations, so a given
/// seed yields the same stream bit-for-bit on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform on (0, 1).
  double uniform_open();
  /// Standard normal via Box-Muller; the second variate of each pair is cached.
  double normal();
  /// Uniform integer in [0, n) by rejection sampling; n > 0.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Independent sub-seed for component `stream` of a run seeded with `seed`.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// `count` distinct integers drawn uniformly from [first, last], sorted ascending
/// (Floyd's algorithm). Requires count <= last - first + 1.
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::size_t first, std::size_t last,
                                                    std::size_t count);

}  // namespace hmmforget

#endif  // HMMFORGET_RANDOM_HPP_
