#ifndef HMMFORGET_SAMPLING_HPP_
#define HMMFORGET_SAMPLING_HPP_

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "hmmforget/model.hpp"
#include "hmmforget/random.hpp"

namespace hmmforget {

struct SampleOutput {
  std::vector<Index> states;
  ObservationSequence observations;
  std::uint64_t seed = 0;
};

/// Streams (x_t, y_t) pairs from a model: x_1 ~ initial M (x_0 ~ initial),
/// x_t ~ row x_{t-1} of M, y_t ~ N(mu_{x_t}, sigma_{x_t}). Holds O(K) state.
class HmmSampler {
 public:
  HmmSampler(const HmmModel& model, std::uint64_t seed);

  std::pair<Index, double> next();

 private:
  Index draw_from(const Vector& cumulative);

  const HmmModel& model_;
  Matrix cumulative_rows_;
  Rng rng_;
  Index state_;
};

SampleOutput sample_sequence(const HmmModel& model, std::size_t n, std::uint64_t seed);

enum class ObservationFormat { text, binary };

/// Text: one decimal value per line (17 significant digits, round-trips exactly).
/// Binary: raw little-endian IEEE-754 float64 values, no header.
void write_observations(const std::filesystem::path& path, const ObservationSequence& obs,
                        ObservationFormat format);
ObservationSequence read_observations(const std::filesystem::path& path, ObservationFormat format);
void write_states(const std::filesystem::path& path, const std::vector<Index>& states);

}  // namespace hmmforget

#endif  // HMMFORGET_SAMPLING_HPP_
