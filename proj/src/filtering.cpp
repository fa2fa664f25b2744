#include "hmmforget/filtering.hpp"

#include <cmath>
#include <stdexcept>

namespace hmmforget {

namespace {

// exp(log D(y) - shift) with shift = max log density; returns the shift.
double shifted_densities(const HmmModel& model, double y, Vector& out) {
  out = log_emission_densities(model, y);
  const double shift = out.maxCoeff();
  out = (out.array() - shift).exp().matrix();
  return shift;
}

double renormalize(Vector& v, double shift) {
  const double total = v.sum();
  if (!(total > 0.0) || !std::isfinite(total) || !std::isfinite(shift))
    throw NumericalError("filter step produced a non-finite or zero normalizer");
  v /= total;
  return std::log(total) + shift;
}

}  // namespace

double advance_forward(Vector& rho, const HmmModel& model, double y) {
  Vector dens;
  const double shift = shifted_densities(model, y, dens);
  rho = (model.transition.transpose() * rho).cwiseProduct(dens);
  return renormalize(rho, shift);
}

double advance_backward(Vector& beta, const HmmModel& model, double y) {
  Vector dens;
  const double shift = shifted_densities(model, y, dens);
  beta = model.transition * dens.cwiseProduct(beta);
  return renormalize(beta, shift);
}

ForwardStep forward_step(const StateDistribution& rho_prev, const HmmModel& model, double y) {
  Vector rho = rho_prev.probs();
  const double log_norm = advance_forward(rho, model, y);
  return {StateDistribution::normalized(rho), log_norm};
}

FilterRun forward_filter(const HmmModel& model, const ObservationSequence& obs) {
  FilterRun run;
  run.rhos.reserve(obs.size());
  run.per_step_log_norms.reserve(obs.size());
  Vector rho = model.initial;
  for (double y : obs.values()) {
    const double log_norm = advance_forward(rho, model, y);
    run.per_step_log_norms.push_back(log_norm);
    run.log_likelihood += log_norm;
    run.rhos.push_back(StateDistribution::normalized(rho));
  }
  return run;
}

StreamingFilter::StreamingFilter(const HmmModel& model) : model_(model), rho_(model.initial) {}

StreamingFilter::StreamingFilter(const HmmModel& model, const StateDistribution& start)
    : model_(model), rho_(start.probs()) {}

void StreamingFilter::push(double y) {
  log_likelihood_ += advance_forward(rho_, model_, y);
  ++steps_;
}

FilterSummary forward_filter_streaming(const HmmModel& model, const ObservationSequence& obs) {
  StreamingFilter filter(model);
  for (double y : obs.values()) filter.push(y);
  return {StateDistribution::normalized(filter.rho()), filter.log_likelihood(), filter.steps()};
}

BackwardRun backward_filter(const HmmModel& model, const ObservationSequence& obs) {
  const std::size_t n = obs.size();
  BackwardRun run;
  run.betas.resize(n);
  Vector beta = Vector::Constant(model.states(), 1.0 / static_cast<double>(model.states()));
  run.betas[n - 1] = StateDistribution::normalized(beta);
  for (std::size_t i = n - 1; i-- > 0;) {
    advance_backward(beta, model, obs[i + 1]);
    run.betas[i] = StateDistribution::normalized(beta);
  }
  return run;
}

StateDistribution smoothed_posterior(const StateDistribution& rho, const StateDistribution& beta) {
  if (rho.size() != beta.size()) throw std::invalid_argument("smoothed_posterior: size mismatch");
  const Vector product = rho.probs().cwiseProduct(beta.probs());
  if (!(product.sum() > 0.0)) throw NumericalError("smoothed_posterior: forward and backward vectors are disjoint");
  return StateDistribution::normalized(product);
}

StateDistribution buffered_forward(const HmmModel& model, const ObservationSequence& obs, std::size_t j,
                                   std::size_t b1, OpCounter* counter) {
  if (j > obs.size() || b1 > j) throw std::out_of_range("buffered_forward: window out of range");
  Vector rho = model.initial;
  for (double y : obs.window(j - b1, b1)) advance_forward(rho, model, y);
  if (counter) counter->matvec += b1;
  return StateDistribution::normalized(rho);
}

StateDistribution buffered_backward(const HmmModel& model, const ObservationSequence& obs, std::size_t j,
                                    std::size_t b2, OpCounter* counter) {
  if (j >= obs.size() || b2 > obs.size() - 1 - j) throw std::out_of_range("buffered_backward: window out of range");
  Vector beta = Vector::Constant(model.states(), 1.0 / static_cast<double>(model.states()));
  for (std::size_t t = j + b2; t > j; --t) advance_backward(beta, model, obs[t]);
  if (counter) counter->matvec += b2;
  return StateDistribution::normalized(beta);
}

}  // namespace hmmforget
