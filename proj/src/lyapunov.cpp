#include "hmmforget/lyapunov.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <thread>

#include "hmmforget/filtering.hpp"
#include "hmmforget/random.hpp"
#include "hmmforget/sampling.hpp"

namespace hmmforget {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kMinAccumulatedSteps = 1000;
constexpr double kCompanionDistance = 1e-8;

void check_gap_inputs(const HmmModel& model, const ObservationSequence& obs, std::size_t burn_in) {
  require_primitive(model);
  if (obs.size() < burn_in + kMinAccumulatedSteps)
    throw std::invalid_argument("gap estimation needs at least burn_in + 1000 observations");
}

// Interior-point weights exp(r_ext - max r_ext), r_ext = (r, 0).
Vector softmax_weights(const Vector& r) {
  Vector w(r.size() + 1);
  w.head(r.size()) = r;
  w[r.size()] = 0.0;
  return (w.array() - w.maxCoeff()).exp().matrix();
}

Vector project_floored(const Vector& rho, std::size_t& floor_hits) {
  const Index k = rho.size();
  Vector r(k - 1);
  double last = rho[k - 1];
  if (last < kProjectionFloor) {
    last = kProjectionFloor;
    ++floor_hits;
  }
  for (Index i = 0; i + 1 < k; ++i) {
    double a = rho[i];
    if (a < kProjectionFloor) {
      a = kProjectionFloor;
      ++floor_hits;
    }
    r[i] = std::log(a) - std::log(last);
  }
  return r;
}

Vector random_unit(Rng& rng, Index dim) {
  Vector e(dim);
  do {
    for (Index i = 0; i < dim; ++i) e[i] = rng.normal();
  } while (e.norm() == 0.0);
  return e.normalized();
}

// One step of the exact two-filter difference: (rho, delta) -> (rho A, delta A) normalized.
void advance_difference(Vector& rho, Vector& delta, const HmmModel& model, double y) {
  Vector dens = log_emission_densities(model, y);
  dens = (dens.array() - dens.maxCoeff()).exp().matrix();
  const Vector u = (model.transition.transpose() * rho).cwiseProduct(dens);
  const Vector v = (model.transition.transpose() * delta).cwiseProduct(dens);
  const double s = u.sum();
  const double t = v.sum();
  if (!(s > 0.0) || !(s + t > 0.0)) throw NumericalError("two-filter difference lost positivity");
  delta = (v * s - u * t) / (s * (s + t));
  rho = u / s;
}

}  // namespace

const char* to_string(GapMethod method) {
  switch (method) {
    case GapMethod::jacobian_power: return "jacobian";
    case GapMethod::qr: return "qr";
    case GapMethod::trajectory: return "trajectory";
  }
  return "unknown";
}

std::size_t GapEstimate::buffer_length(double epsilon) const { return hmmforget::buffer_length(gap, epsilon); }

LogRatioVector project(const StateDistribution& rho) {
  const Vector& a = rho.probs();
  if ((a.array() <= 0.0).any()) throw DomainError("project: distribution has a zero component");
  const Index k = a.size();
  return {(a.head(k - 1).array().log() - std::log(a[k - 1])).matrix()};
}

StateDistribution unproject(const LogRatioVector& r) {
  if (!r.r.allFinite()) throw DomainError("unproject: non-finite log ratio");
  return StateDistribution::normalized(softmax_weights(r.r));
}

LogRatioVector map_f(const Matrix& transition, const LogRatioVector& r) {
  const Index k = transition.rows();
  if (r.r.size() != k - 1) throw std::invalid_argument("map_f: dimension mismatch");
  const Vector w = softmax_weights(r.r);
  const Vector mass = transition.transpose() * w;  // mass_i = w . m_i
  return {(mass.head(k - 1).array().log() - std::log(mass[k - 1])).matrix()};
}

LogRatioVector map_f(const HmmModel& model, const LogRatioVector& r) { return map_f(model.transition, r); }

LogRatioVector translation_d(const HmmModel& model, double y) {
  const Vector logd = log_emission_densities(model, y);
  const Index k = logd.size();
  return {(logd.head(k - 1).array() - logd[k - 1]).matrix()};
}

Matrix jacobian(const Matrix& transition, const LogRatioVector& r) {
  const Index k = transition.rows();
  if (r.r.size() != k - 1) throw std::invalid_argument("jacobian: dimension mismatch");
  const Vector w = softmax_weights(r.r);
  const Vector mass = transition.transpose() * w;
  Matrix jac(k - 1, k - 1);
  for (Index i = 0; i + 1 < k; ++i)
    for (Index j = 0; j + 1 < k; ++j)
      jac(i, j) = w[j] * transition(j, i) / mass[i] - w[j] * transition(j, k - 1) / mass[k - 1];
  return jac;
}

Matrix jacobian(const HmmModel& model, const LogRatioVector& r) { return jacobian(model.transition, r); }

GapEstimate estimate_gap(const HmmModel& model, const ObservationSequence& obs, std::size_t burn_in,
                         std::uint64_t seed) {
  check_gap_inputs(model, obs, burn_in);
  GapEstimate est;
  est.method = GapMethod::jacobian_power;
  est.burn_in = burn_in;
  est.iterations = obs.size() - burn_in;
  const Index k = model.states();
  if (k == 1) {
    est.gap = kNegInf;
    return est;
  }

  Rng rng(seed);
  Vector e = random_unit(rng, k - 1);
  Vector rho = model.initial;
  double acc = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    advance_forward(rho, model, obs[t]);
    const LogRatioVector r{project_floored(rho, est.floor_hits)};
    e = jacobian(model.transition, r) * e;
    const double norm = e.norm();
    if (norm == 0.0) {
      est.gap = kNegInf;
      return est;
    }
    if (!std::isfinite(norm)) throw NumericalError("estimate_gap: non-finite tangent vector");
    if (t >= burn_in) acc += std::log(norm);
    e /= norm;
  }
  est.gap = acc / static_cast<double>(est.iterations);
  return est;
}

GapEstimate estimate_backward_gap(const HmmModel& model, const ObservationSequence& obs, std::size_t burn_in,
                                  std::uint64_t seed) {
  check_gap_inputs(model, obs, burn_in);
  GapEstimate est;
  est.method = GapMethod::jacobian_power;
  est.burn_in = burn_in;
  est.iterations = obs.size() - burn_in;
  const Index k = model.states();
  if (k == 1) {
    est.gap = kNegInf;
    return est;
  }

  // In log-ratio coordinates the backward step is r' = F_{M^T}(r + d(y)).
  const Matrix reversed = model.transition.transpose();
  Rng rng(seed);
  Vector e = random_unit(rng, k - 1);
  Vector beta = Vector::Constant(k, 1.0 / static_cast<double>(k));
  double acc = 0.0;
  for (std::size_t step = 0; step < obs.size(); ++step) {
    const double y = obs[obs.size() - 1 - step];
    const LogRatioVector shifted{project_floored(beta, est.floor_hits) + translation_d(model, y).r};
    advance_backward(beta, model, y);
    e = jacobian(reversed, shifted) * e;
    const double norm = e.norm();
    if (norm == 0.0) {
      est.gap = kNegInf;
      return est;
    }
    if (!std::isfinite(norm)) throw NumericalError("estimate_backward_gap: non-finite tangent vector");
    if (step >= burn_in) acc += std::log(norm);
    e /= norm;
  }
  est.gap = acc / static_cast<double>(est.iterations);
  return est;
}

std::size_t buffer_length(double gap, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("buffer_length: epsilon must lie in (0, 1)");
  if (std::isnan(gap) || gap >= 0.0) throw std::invalid_argument("buffer_length: no forgetting detected (gap >= 0)");
  if (std::isinf(gap)) return 1;
  const double ratio = std::log(epsilon) / gap;
  // absorb rounding in ln(epsilon) so exact ratios are not bumped to the next integer
  const double length = std::ceil(ratio - 1e-9 * std::max(1.0, ratio));
  return static_cast<std::size_t>(std::max(1.0, length));
}

LyapunovSpectrum qr_spectrum(const HmmModel& model, const ObservationSequence& obs, std::size_t burn_in) {
  check_gap_inputs(model, obs, burn_in);
  const Index k = model.states();
  LyapunovSpectrum out;
  Vector acc = Vector::Zero(k);
  Index frame = k;
  Matrix q = Matrix::Identity(k, k);
  const Matrix mt = model.transition.transpose();

  for (std::size_t t = 0; t < obs.size(); ++t) {
    Vector logd = log_emission_densities(model, obs[t]);
    const double shift = logd.maxCoeff();
    const Vector dens = (logd.array() - shift).exp().matrix();
    // column form of p <- p M D: p^T <- D M^T p^T
    const Matrix z = dens.asDiagonal() * (mt * q.leftCols(frame));
    Eigen::HouseholderQR<Matrix> qr(z);
    const Matrix r = qr.matrixQR().topLeftCorner(frame, frame).triangularView<Eigen::Upper>();
    Matrix qnew = qr.householderQ() * Matrix::Identity(k, frame);
    Index keep = frame;
    for (Index i = 0; i < frame; ++i) {
      if (r(i, i) == 0.0) {
        keep = i;
        break;
      }
      if (r(i, i) < 0.0) qnew.col(i) = -qnew.col(i);
      if (t >= burn_in) acc[i] += std::log(std::abs(r(i, i))) + shift;
    }
    if (keep < frame) {
      out.warnings.push_back("frame reduced from " + std::to_string(frame) + " to " + std::to_string(keep) +
                             " at step " + std::to_string(t));
      frame = keep;
      if (frame == 0) break;
    }
    q.leftCols(frame) = qnew.leftCols(frame);
  }
  out.steps = obs.size() - burn_in;
  out.exponents.resize(static_cast<std::size_t>(k));
  for (Index i = 0; i < k; ++i)
    out.exponents[static_cast<std::size_t>(i)] = i < frame ? acc[i] / static_cast<double>(out.steps) : kNegInf;
  std::sort(out.exponents.begin(), out.exponents.end(), std::greater<>());
  return out;
}

GapEstimate qr_gap(const HmmModel& model, const ObservationSequence& obs, std::size_t burn_in) {
  const LyapunovSpectrum spectrum = qr_spectrum(model, obs, burn_in);
  GapEstimate est;
  est.method = GapMethod::qr;
  est.burn_in = burn_in;
  est.iterations = spectrum.steps;
  est.gap = spectrum.gap();
  return est;
}

std::vector<double> trajectory_distances(const HmmModel& model, const ObservationSequence& obs,
                                         const StateDistribution& p0, const StateDistribution& p0_alt,
                                         double cutoff) {
  if (p0.size() != model.states() || p0_alt.size() != model.states())
    throw std::invalid_argument("trajectory_distances: initial distributions have the wrong size");
  Vector rho = p0.probs();
  Vector delta = p0_alt.probs() - p0.probs();
  std::vector<double> out;
  out.reserve(obs.size());
  for (double y : obs.values()) {
    advance_difference(rho, delta, model, y);
    const double dist = delta.norm();
    if (dist == 0.0 || dist < cutoff) break;
    out.push_back(dist);
  }
  return out;
}

std::vector<double> trajectory_decay(const HmmModel& model, const ObservationSequence& obs,
                                     const StateDistribution& p0, const StateDistribution& p0_alt, double cutoff) {
  std::vector<double> series = trajectory_distances(model, obs, p0, p0_alt, cutoff);
  for (std::size_t n = 0; n < series.size(); ++n) series[n] = std::log(series[n]) / static_cast<double>(n + 1);
  return series;
}

GapEstimate trajectory_gap(const HmmModel& model, const ObservationSequence& obs, std::size_t burn_in,
                           std::uint64_t seed) {
  check_gap_inputs(model, obs, burn_in);
  GapEstimate est;
  est.method = GapMethod::trajectory;
  est.burn_in = burn_in;
  est.iterations = obs.size() - burn_in;
  const Index k = model.states();
  if (k == 1) {
    est.gap = kNegInf;
    return est;
  }

  // perturbation along a random direction of the simplex tangent space (sum zero)
  Rng rng(seed);
  Vector delta(k);
  do {
    for (Index i = 0; i < k; ++i) delta[i] = rng.normal();
    delta.array() -= delta.mean();
  } while (delta.norm() == 0.0);
  delta *= kCompanionDistance / delta.norm();

  Vector rho = model.initial;
  double acc = 0.0;
  for (std::size_t t = 0; t < obs.size(); ++t) {
    advance_difference(rho, delta, model, obs[t]);
    const double dist = delta.norm();
    if (dist == 0.0) {
      est.gap = kNegInf;
      return est;
    }
    if (t >= burn_in) acc += std::log(dist / kCompanionDistance);
    delta *= kCompanionDistance / dist;
  }
  est.gap = acc / static_cast<double>(est.iterations);
  return est;
}

SyncCurves sync_experiment(const HmmModel& model, std::size_t sequences, std::size_t steps, std::uint64_t seed,
                           const StateDistribution& p0, const StateDistribution& p0_alt, double cutoff,
                           double mean_cutoff, unsigned threads) {
  if (sequences == 0 || steps == 0) throw std::invalid_argument("sync_experiment: empty experiment");
  SyncCurves out;
  out.per_seed.resize(sequences);
  std::vector<std::vector<double>> distances(sequences);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t k = begin; k < end; ++k) {
      const SampleOutput sample = sample_sequence(model, steps, derive_seed(seed, k));
      distances[k] = trajectory_distances(model, sample.observations, p0, p0_alt, mean_cutoff);
      auto& series = out.per_seed[k];
      for (std::size_t n = 0; n < distances[k].size() && distances[k][n] >= cutoff; ++n)
        series.push_back(std::log(distances[k][n]) / static_cast<double>(n + 1));
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(sequences)));
  if (threads == 1) {
    work(0, sequences);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (sequences + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t)
      if (t * chunk < sequences) pool.emplace_back(work, t * chunk, std::min(sequences, (t + 1) * chunk));
    for (auto& th : pool) th.join();
  }

  out.mean_log_distance.assign(steps, 0.0);
  out.contributors.assign(steps, 0);
  for (const auto& d : distances)
    for (std::size_t n = 0; n < d.size(); ++n) {
      out.mean_log_distance[n] += std::log(d[n]);
      ++out.contributors[n];
    }
  for (std::size_t n = 0; n < steps; ++n)
    out.mean_log_distance[n] = out.contributors[n] > 0 ? out.mean_log_distance[n] / static_cast<double>(out.contributors[n])
                                                       : std::numeric_limits<double>::quiet_NaN();
  return out;
}

double hilbert_metric(const Vector& x, const Vector& y) {
  if (x.size() != y.size() || x.size() == 0) throw std::invalid_argument("hilbert_metric: size mismatch");
  if ((x.array() <= 0.0).any() || (y.array() <= 0.0).any())
    throw DomainError("hilbert_metric: vectors must be strictly positive");
  const Eigen::ArrayXd ratio = x.array() / y.array();
  return std::log(ratio.maxCoeff()) - std::log(ratio.minCoeff());
}

BirkhoffCoefficient birkhoff_tau(const Matrix& m) {
  if (m.size() == 0) throw std::invalid_argument("birkhoff_tau: empty matrix");
  BirkhoffCoefficient out;
  for (Index p = 0; p < m.rows(); ++p) {
    const bool any_zero = (m.row(p).array() == 0.0).any();
    const bool any_positive = (m.row(p).array() > 0.0).any();
    if (!any_positive) throw std::invalid_argument("birkhoff_tau: all-zero row");
    if (any_zero) return out;  // phi = 0, tau = 1
  }
  double phi = 1.0;
  for (Index p = 0; p < m.rows(); ++p)
    for (Index r = 0; r < m.rows(); ++r) {
      if (r == p) continue;
      for (Index q = 0; q < m.cols(); ++q)
        for (Index s = 0; s < m.cols(); ++s) {
          if (s == q) continue;
          phi = std::min(phi, (m(p, q) * m(r, s)) / (m(r, q) * m(p, s)));
        }
    }
  out.phi = phi;
  const double root = std::sqrt(phi);
  out.tau = (1.0 - root) / (1.0 + root);
  out.vacuous = out.tau >= 1.0;
  return out;
}

}  // namespace hmmforget
