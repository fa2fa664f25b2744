#ifndef HMMFORGET_LYAPUNOV_HPP_
#define HMMFORGET_LYAPUNOV_HPP_

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "hmmforget/model.hpp"

namespace hmmforget {

/// Log-ratio coordinates r_i = ln(a_i / a_K), i < K, of an interior simplex point.
/// The pivot r_K = 0 is implicit.
struct LogRatioVector {
  Vector r;
};

/// Raised when a point on the simplex boundary is projected.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

enum class GapMethod { jacobian_power, qr, trajectory };

const char* to_string(GapMethod method);

/// Estimate of the forgetting rate lambda_2 - lambda_1 (negative for
/// primitive models with positive emissions; -inf when the map collapses).
struct GapEstimate {
  double gap = 0.0;
  std::size_t iterations = 0;  // accumulated steps (after burn-in)
  std::size_t burn_in = 0;
  GapMethod method = GapMethod::jacobian_power;
  std::size_t floor_hits = 0;  // components floored before projecting

  /// ceil(ln(epsilon) / gap); see buffer_length(double, double).
  std::size_t buffer_length(double epsilon) const;
};

inline constexpr double kProjectionFloor = 1e-300;
inline constexpr std::size_t kDefaultBurnIn = 100;

LogRatioVector project(const StateDistribution& rho);
/// Softmax with r_K = 0, evaluated with max-subtraction.
StateDistribution unproject(const LogRatioVector& r);

/// F_i(r) = ln(exp(r) . m_i / exp(r) . m_K) for the columns m_i of `transition`.
LogRatioVector map_f(const Matrix& transition, const LogRatioVector& r);
LogRatioVector map_f(const HmmModel& model, const LogRatioVector& r);

/// d_i(y) = ln p(y | i) - ln p(y | K), from log densities.
LogRatioVector translation_d(const HmmModel& model, double y);

/// (K-1) x (K-1) Jacobian of map_f:
///   J_ij = e^{r_j} M_ji / (e^r . m_i) - e^{r_j} M_jK / (e^r . m_K)
Matrix jacobian(const Matrix& transition, const LogRatioVector& r);
Matrix jacobian(const HmmModel& model, const LogRatioVector& r);

/// Forgetting rate of the forward filter from the finite-time Lyapunov
/// exponent of the Jacobian cocycle J(r_n) ... J(r_1), with a random unit
/// start vector drawn from `seed`. Requires a primitive model and
/// obs.size() >= burn_in + 1000.
GapEstimate estimate_gap(const HmmModel& model, const ObservationSequence& obs,
                         std::size_t burn_in = kDefaultBurnIn, std::uint64_t seed = 0);

/// Same estimator for the normalized backward recursion beta_i ∝ M D_{i+1} beta_{i+1},
/// run over the observations in reverse.
GapEstimate estimate_backward_gap(const HmmModel& model, const ObservationSequence& obs,
                                  std::size_t burn_in = kDefaultBurnIn, std::uint64_t seed = 0);

/// ceil(ln(epsilon) / gap). Throws std::invalid_argument for gap >= 0 ("no
/// forgetting detected") or epsilon outside (0, 1); gap = -inf gives 1.
std::size_t buffer_length(double gap, double epsilon);

struct LyapunovSpectrum {
  std::vector<double> exponents;  // descending; -inf for directions that collapsed
  std::size_t steps = 0;
  std::vector<std::string> warnings;

  double gap() const { return exponents.size() < 2 ? -std::numeric_limits<double>::infinity() : exponents[1] - exponents[0]; }
};

/// Full Lyapunov spectrum of the products p_0 M D_1 ... M D_n by QR
/// reorthonormalization of a K-frame.
LyapunovSpectrum qr_spectrum(const HmmModel& model, const ObservationSequence& obs,
                             std::size_t burn_in = kDefaultBurnIn);
GapEstimate qr_gap(const HmmModel& model, const ObservationSequence& obs, std::size_t burn_in = kDefaultBurnIn);

/// ||rho_n - rho'_n||_2 for two filters driven by the same observations. The
/// difference is propagated directly,
///   delta' = (v s - u t) / (s (s + t)),  u = rho A, v = delta A, s = u.1, t = v.1,
/// so it stays accurate far below machine epsilon relative to rho.
/// The series stops at the first step whose distance is below `cutoff`.
std::vector<double> trajectory_distances(const HmmModel& model, const ObservationSequence& obs,
                                         const StateDistribution& p0, const StateDistribution& p0_alt,
                                         double cutoff = 0.0);

/// Series of (1/n) ln ||rho_n - rho'_n||_2, n = 1, 2, ..., truncated once the
/// distance drops below `cutoff`. Identical starts give an empty series.
std::vector<double> trajectory_decay(const HmmModel& model, const ObservationSequence& obs,
                                     const StateDistribution& p0, const StateDistribution& p0_alt,
                                     double cutoff = 1e-14);

/// Two-trajectory estimate: a companion filter is kept at distance 1e-8 from
/// the reference filter by rescaling the difference every step, and the
/// accumulated log contraction is averaged per step.
GapEstimate trajectory_gap(const HmmModel& model, const ObservationSequence& obs,
                           std::size_t burn_in = kDefaultBurnIn, std::uint64_t seed = 0);

/// Repeated two-filter runs over independently sampled sequences.
struct SyncCurves {
  std::vector<std::vector<double>> per_seed;  // trajectory_decay series per sequence
  std::vector<double> mean_log_distance;      // mean over sequences of ln ||rho_n - rho'_n||_2
  std::vector<std::size_t> contributors;      // sequences still above mean_cutoff at step n
};

/// Sequence k is sample_sequence(model, steps, derive_seed(seed, k)).
/// Per-seed series are cut at `cutoff`; the mean curve only drops a sequence
/// once its distance falls below `mean_cutoff` (0: exact zero only).
SyncCurves sync_experiment(const HmmModel& model, std::size_t sequences, std::size_t steps, std::uint64_t seed,
                           const StateDistribution& p0, const StateDistribution& p0_alt, double cutoff = 1e-14,
                           double mean_cutoff = 0.0, unsigned threads = 1);

/// Hilbert projective metric ln((max_i x_i/y_i) / (min_j x_j/y_j)).
double hilbert_metric(const Vector& x, const Vector& y);

struct BirkhoffCoefficient {
  double phi = 0.0;   // min cross ratio over 2x2 submatrices
  double tau = 1.0;   // (1 - sqrt(phi)) / (1 + sqrt(phi))
  bool vacuous = true;  // tau = 1: no contraction bound available
};

BirkhoffCoefficient birkhoff_tau(const Matrix& m);

}  // namespace hmmforget

#endif  // HMMFORGET_LYAPUNOV_HPP_
