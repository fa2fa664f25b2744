#ifndef HMMFORGET_FILTERING_HPP_
#define HMMFORGET_FILTERING_HPP_

#include <cstdint>
#include <vector>

#include "hmmforget/model.hpp"

namespace hmmforget {

// Indexing: observations are 0-based, obs[t] is y_{t+1}.
//   rhos[t]  = p(x_{t+1} | y_{1..t+1}), the filtered distribution after obs[0..t]
//   betas[t] ∝ p(y_{t+2..n} | x_{t+1}),  built from obs[t+1..n-1]; betas[n-1] is uniform

/// Counts matrix-vector products (one per filter step and one per gradient term).
struct OpCounter {
  std::uint64_t matvec = 0;
};

/// u = rho M D(y); rho <- u / (u . 1). Returns ln(u . 1).
/// Emissions are evaluated with a max-log shift so extreme y cannot underflow.
double advance_forward(Vector& rho, const HmmModel& model, double y);
/// b <- M D(y) b, renormalized to the simplex. Returns ln of the normalizer.
double advance_backward(Vector& beta, const HmmModel& model, double y);

struct ForwardStep {
  StateDistribution rho;
  double log_norm = 0.0;
};

ForwardStep forward_step(const StateDistribution& rho_prev, const HmmModel& model, double y);

struct FilterRun {
  std::vector<StateDistribution> rhos;
  std::vector<double> per_step_log_norms;
  double log_likelihood = 0.0;  // sum of per_step_log_norms
};

FilterRun forward_filter(const HmmModel& model, const ObservationSequence& obs);

/// Forward filter holding only the current distribution and the running log-likelihood.
class StreamingFilter {
 public:
  explicit StreamingFilter(const HmmModel& model);
  StreamingFilter(const HmmModel& model, const StateDistribution& start);

  void push(double y);

  const Vector& rho() const { return rho_; }
  double log_likelihood() const { return log_likelihood_; }
  std::size_t steps() const { return steps_; }

 private:
  const HmmModel& model_;
  Vector rho_;
  double log_likelihood_ = 0.0;
  std::size_t steps_ = 0;
};

struct FilterSummary {
  StateDistribution final_rho;
  double log_likelihood = 0.0;
  std::size_t n = 0;
};

FilterSummary forward_filter_streaming(const HmmModel& model, const ObservationSequence& obs);

struct BackwardRun {
  std::vector<StateDistribution> betas;
};

BackwardRun backward_filter(const HmmModel& model, const ObservationSequence& obs);

/// normalize(rho ∘ beta).
StateDistribution smoothed_posterior(const StateDistribution& rho, const StateDistribution& beta);

/// Approximates the filtered distribution just before obs[j] (rhos[j-1], or the
/// initial distribution when j = 0) by filtering obs[j-b1 .. j-1] from model.initial.
/// Requires b1 <= j.
StateDistribution buffered_forward(const HmmModel& model, const ObservationSequence& obs, std::size_t j,
                                   std::size_t b1, OpCounter* counter = nullptr);

/// Approximates betas[j] from obs[j+1 .. j+b2] only. Requires j + b2 < n.
StateDistribution buffered_backward(const HmmModel& model, const ObservationSequence& obs, std::size_t j,
                                    std::size_t b2, OpCounter* counter = nullptr);

}  // namespace hmmforget

#endif  // HMMFORGET_FILTERING_HPP_
