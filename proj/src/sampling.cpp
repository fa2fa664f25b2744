#include "hmmforget/sampling.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace hmmforget {

namespace {

Vector cumulative(const Vector& probs) {
  Vector c(probs.size());
  double acc = 0.0;
  for (Index i = 0; i < probs.size(); ++i) c[i] = (acc += probs[i]);
  return c;
}

}  // namespace

HmmSampler::HmmSampler(const HmmModel& model, std::uint64_t seed)
    : model_(model), cumulative_rows_(model.states(), model.states()), rng_(seed) {
  auto violations = validate(model);
  if (!violations.empty()) throw ModelError("cannot sample from an invalid model: " + violations.front(), violations);
  for (Index i = 0; i < model.states(); ++i)
    cumulative_rows_.row(i) = cumulative(model.transition.row(i).transpose()).transpose();
  state_ = draw_from(cumulative(model.initial));
}

Index HmmSampler::draw_from(const Vector& cdf) {
  const double u = rng_.uniform() * cdf[cdf.size() - 1];
  for (Index i = 0; i + 1 < cdf.size(); ++i)
    if (u < cdf[i]) return i;
  // zero-probability tail states are never chosen
  Index last = cdf.size() - 1;
  while (last > 0 && cdf[last] == cdf[last - 1]) --last;
  return last;
}

std::pair<Index, double> HmmSampler::next() {
  state_ = draw_from(cumulative_rows_.row(state_).transpose());
  const double y = model_.means[state_] + model_.stds[state_] * rng_.normal();
  return {state_, y};
}

SampleOutput sample_sequence(const HmmModel& model, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("sample_sequence: n must be positive");
  HmmSampler sampler(model, seed);
  std::vector<Index> states(n);
  std::vector<double> ys(n);
  for (std::size_t t = 0; t < n; ++t) std::tie(states[t], ys[t]) = sampler.next();
  return SampleOutput{std::move(states), ObservationSequence(std::move(ys)), seed};
}

void write_observations(const std::filesystem::path& path, const ObservationSequence& obs,
                        ObservationFormat format) {
  if (format == ObservationFormat::binary) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (double v : obs.values()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      unsigned char buf[8];
      std::memcpy(buf, &bits, 8);
      out.write(reinterpret_cast<const char*>(buf), 8);
    }
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(17);
  for (double v : obs.values()) out << v << '\n';
}

ObservationSequence read_observations(const std::filesystem::path& path, ObservationFormat format) {
  std::vector<double> values;
  if (format == ObservationFormat::binary) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ModelError("cannot open observation file " + path.string());
    unsigned char buf[8];
    while (in.read(reinterpret_cast<char*>(buf), 8)) {
      std::uint64_t bits;
      std::memcpy(&bits, buf, 8);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
      values.push_back(std::bit_cast<double>(bits));
    }
    if (in.gcount() != 0) throw ModelError("observation file " + path.string() + " has a truncated record");
    return ObservationSequence(std::move(values));
  }
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open observation file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ss(line);
    double v;
    if (!(ss >> v)) throw ModelError(path.string() + ":" + std::to_string(lineno) + ": not a number");
    values.push_back(v);
  }
  return ObservationSequence(std::move(values));
}

void write_states(const std::filesystem::path& path, const std::vector<Index>& states) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (Index s : states) out << s << '\n';
}

}  // namespace hmmforget
