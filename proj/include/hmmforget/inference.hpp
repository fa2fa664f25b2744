#ifndef HMMFORGET_INFERENCE_HPP_
#define HMMFORGET_INFERENCE_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hmmforget/filtering.hpp"
#include "hmmforget/model.hpp"

namespace hmmforget {

enum class ParamKind { mean, stddev, transition_row };

struct FreeParam {
  ParamKind kind;
  Index state;  // 0-based
  bool operator==(const FreeParam&) const = default;
};

/// Which parameters are free and the order they are packed in. Optimization
/// coordinates: mu as is, log sigma, and for a transition row i the K-1
/// logits ln(M_ic / M_iK), c < K.
class ParamSelector {
 public:
  ParamSelector() = default;
  explicit ParamSelector(std::vector<FreeParam> params);

  /// Parses "mu1,mu2,sigma1,row3" (1-based state numbers).
  static ParamSelector parse(std::string_view text);

  const std::vector<FreeParam>& params() const { return params_; }
  bool empty() const { return params_.empty(); }
  Index dimension(Index states) const;
  /// Labels of the natural-value vector, e.g. "mu1", "sigma1", "M1_2".
  std::vector<std::string> labels(Index states) const;

 private:
  std::vector<FreeParam> params_;
};

Vector pack(const HmmModel& model, const ParamSelector& selector);
HmmModel unpack(const HmmModel& base, const ParamSelector& selector, const Vector& theta);
/// mu, sigma and the first K-1 probabilities of each free row, in packing order.
Vector natural_values(const HmmModel& model, const ParamSelector& selector);

struct EmissionDerivative {
  double d_dmu = 0.0;
  double d_dsigma = 0.0;
};

/// Partial derivatives of N(y; mu_state, sigma_state) in mu and sigma.
EmissionDerivative d_emission(const HmmModel& model, Index state, double y);

/// One summand of the log-likelihood gradient in optimization coordinates:
///   rho_{j-1} d(M D_j) beta_j / (rho_{j-1} M D_j beta_j)
/// where rho_prev is the filtered distribution before obs[j] and beta_j = betas[j].
Vector term_gradient(const HmmModel& model, const ObservationSequence& obs, std::size_t j,
                     const StateDistribution& rho_prev, const StateDistribution& beta_j,
                     const ParamSelector& selector);

/// Exact gradient of ln p(y_{1:n} | theta) (uniform prior) in optimization coordinates.
Vector full_gradient(const HmmModel& model, const ObservationSequence& obs, const ParamSelector& selector);

/// Exact sum of term_gradient over j in [first, last] (0-based observation indices).
Vector restricted_gradient(const HmmModel& model, const ObservationSequence& obs, const ParamSelector& selector,
                           std::size_t first, std::size_t last);

struct MinibatchOptions {
  std::size_t batch_size = 100;
  std::size_t b1 = 200;
  std::size_t b2 = 200;
  std::uint64_t seed = 0;
  /// Filter the whole prefix/suffix for every term instead of b1/b2 windows.
  /// The sampling range is still [b1, n - b2 - 2].
  bool exact_windows = false;
  /// Reject candidates whose [j - b1, j + b2] windows overlap an accepted one.
  bool non_overlapping = false;
  unsigned threads = 1;
};

struct GradientReport {
  Vector gradient;
  std::vector<Vector> terms;         // per sampled index, unscaled
  std::vector<std::size_t> indices;  // 0-based, ascending
  Vector variance;                   // estimated variance of each gradient component
  double scale = 0.0;                // (n - b1 - b2 - 1) / s
  std::size_t range_first = 0;
  std::size_t range_last = 0;
  std::uint64_t matvec_products = 0;
};

/// Buffered mini-batch estimator: s indices drawn uniformly without
/// replacement from [b1, n - b2 - 2], each term built from windowed filters,
/// scaled so the estimator is unbiased for restricted_gradient over that range.
GradientReport minibatch_gradient(const HmmModel& model, const ObservationSequence& obs,
                                  const ParamSelector& selector, const MinibatchOptions& options);

struct SgdConfig {
  double eta0 = 0.05;
  double decay = 0.95;
  std::size_t steps_per_restart = 25;
  double restart_threshold = 0.02;
  std::size_t max_restarts = 50;
  std::size_t batch_size = 100;
  /// Fixed buffers; when unset they are re-estimated at every restart from
  /// the forward/backward gaps and `epsilon`.
  std::optional<std::size_t> b1;
  std::optional<std::size_t> b2;
  double epsilon = 1e-10;
  std::uint64_t seed = 0;
  /// Restart the eta0 * decay^t schedule at every restart.
  bool reset_eta_on_restart = true;
  bool non_overlapping = false;
  std::size_t probe_length = 10000;
  double divergence_nats = 1e3;
  std::size_t gap_window = 20000;
  unsigned threads = 1;
};

struct TraceRow {
  std::size_t restart = 0;
  std::size_t step = 0;  // global step count
  Vector theta;          // natural values
  double eta = 0.0;
  double probe_loglik = 0.0;
};

struct SgdResult {
  HmmModel model;
  Vector theta;  // natural values
  std::vector<TraceRow> trace;
  std::uint64_t matvec_products = 0;  // windowed gradient work
  std::uint64_t gap_matvecs = 0;      // buffer re-estimation work
  std::size_t restarts = 0;
  std::size_t steps = 0;
  bool converged = false;
  std::size_t b1 = 0;
  std::size_t b2 = 0;
};

/// Normalized-gradient ascent with periodic restarts:
///   theta <- theta + eta_t g / ||g||,  eta_t = eta0 decay^t,
/// stopping once the natural parameters move less than restart_threshold
/// (infinity norm) over a restart cycle. Throws NumericalError if the probe
/// log-likelihood falls more than divergence_nats below its best value.
SgdResult sgd_infer(const HmmModel& model0, const ObservationSequence& obs, const ParamSelector& selector,
                    const SgdConfig& config);

}  // namespace hmmforget

#endif  // HMMFORGET_INFERENCE_HPP_
