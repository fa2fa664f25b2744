#include "hmmforget/inference.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <thread>

#include "hmmforget/lyapunov.hpp"
#include "hmmforget/random.hpp"

namespace hmmforget {

namespace {

Index width(const FreeParam& p, Index states) { return p.kind == ParamKind::transition_row ? states - 1 : 1; }

void check_state(const FreeParam& p, Index states) {
  if (p.state < 0 || p.state >= states) throw std::invalid_argument("free parameter refers to a missing state");
}

// Unscaled term for the observation at j, given the vectors around it.
Vector term_from_vectors(const HmmModel& model, double y, const Vector& rho_prev, const Vector& beta,
                         const ParamSelector& selector) {
  const Index k = model.states();
  Vector logd = log_emission_densities(model, y);
  logd.array() -= logd.maxCoeff();
  const Vector dens = logd.array().exp().matrix();  // common scale cancels in the ratio
  const Vector pm = model.transition.transpose() * rho_prev;
  const Vector weighted = dens.cwiseProduct(beta);  // N_m beta_m
  const double denominator = pm.dot(weighted);
  if (!(denominator > 0.0) || !std::isfinite(denominator))
    throw NumericalError("gradient term has a nonpositive denominator");

  Vector out(selector.dimension(k));
  Index at = 0;
  for (const FreeParam& p : selector.params()) {
    const Index s = p.state;
    switch (p.kind) {
      case ParamKind::mean: {
        const double z = (y - model.means[s]) / model.stds[s];
        out[at++] = pm[s] * weighted[s] * z / model.stds[s] / denominator;
        break;
      }
      case ParamKind::stddev: {  // d/d log sigma
        const double z = (y - model.means[s]) / model.stds[s];
        out[at++] = pm[s] * weighted[s] * (z * z - 1.0) / denominator;
        break;
      }
      case ParamKind::transition_row: {
        // dM_sm / dlogit_c = M_sm (delta_mc - M_sc)
        const double row_mass = model.transition.row(s).dot(weighted);
        for (Index c = 0; c + 1 < k; ++c)
          out[at++] = rho_prev[s] * model.transition(s, c) * (weighted[c] - row_mass) / denominator;
        break;
      }
    }
  }
  return out;
}

std::vector<std::size_t> draw_indices(Rng& rng, std::size_t first, std::size_t last, std::size_t count,
                                      std::size_t spacing, bool non_overlapping) {
  if (!non_overlapping) return sample_without_replacement(rng, first, last, count);
  std::vector<std::size_t> chosen;
  const std::size_t range = last - first + 1;
  const std::size_t max_attempts = 1000 * count + 1000;
  for (std::size_t attempt = 0; chosen.size() < count; ++attempt) {
    if (attempt >= max_attempts)
      throw std::invalid_argument("cannot place non-overlapping windows; reduce batch size or buffers");
    const std::size_t candidate = first + static_cast<std::size_t>(rng.below(range));
    const bool clear = std::all_of(chosen.begin(), chosen.end(), [&](std::size_t j) {
      return (candidate > j ? candidate - j : j - candidate) > spacing;
    });
    if (clear) chosen.push_back(candidate);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

double probe_loglik(const HmmModel& model, const ObservationSequence& obs, std::size_t length) {
  StreamingFilter filter(model);
  for (double y : obs.window(0, std::min(length, obs.size()))) filter.push(y);
  return filter.log_likelihood();
}

}  // namespace

ParamSelector::ParamSelector(std::vector<FreeParam> params) : params_(std::move(params)) {
  for (std::size_t i = 0; i < params_.size(); ++i)
    for (std::size_t j = i + 1; j < params_.size(); ++j)
      if (params_[i] == params_[j]) throw std::invalid_argument("duplicate free parameter");
}

ParamSelector ParamSelector::parse(std::string_view text) {
  std::vector<FreeParam> params;
  while (!text.empty()) {
    const auto comma = text.find(',');
    std::string_view item = text.substr(0, comma);
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    if (item.empty()) continue;

    ParamKind kind;
    std::string_view digits;
    if (item.starts_with("mu")) {
      kind = ParamKind::mean;
      digits = item.substr(2);
    } else if (item.starts_with("sigma")) {
      kind = ParamKind::stddev;
      digits = item.substr(5);
    } else if (item.starts_with("row")) {
      kind = ParamKind::transition_row;
      digits = item.substr(3);
    } else {
      throw std::invalid_argument("unknown free parameter '" + std::string(item) + "'");
    }
    long number = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), number);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || number < 1)
      throw std::invalid_argument("bad state number in '" + std::string(item) + "'");
    params.push_back({kind, static_cast<Index>(number - 1)});
  }
  if (params.empty()) throw std::invalid_argument("no free parameters given");
  return ParamSelector(std::move(params));
}

Index ParamSelector::dimension(Index states) const {
  Index d = 0;
  for (const auto& p : params_) d += width(p, states);
  return d;
}

std::vector<std::string> ParamSelector::labels(Index states) const {
  std::vector<std::string> out;
  for (const auto& p : params_) {
    const std::string s = std::to_string(p.state + 1);
    switch (p.kind) {
      case ParamKind::mean: out.push_back("mu" + s); break;
      case ParamKind::stddev: out.push_back("sigma" + s); break;
      case ParamKind::transition_row:
        for (Index c = 0; c + 1 < states; ++c) out.push_back("M" + s + "_" + std::to_string(c + 1));
        break;
    }
  }
  return out;
}

Vector pack(const HmmModel& model, const ParamSelector& selector) {
  const Index k = model.states();
  Vector theta(selector.dimension(k));
  Index at = 0;
  for (const auto& p : selector.params()) {
    check_state(p, k);
    switch (p.kind) {
      case ParamKind::mean: theta[at++] = model.means[p.state]; break;
      case ParamKind::stddev: theta[at++] = std::log(model.stds[p.state]); break;
      case ParamKind::transition_row: {
        const double last = model.transition(p.state, k - 1);
        if ((model.transition.row(p.state).array() <= 0.0).any())
          throw ModelError("a free transition row must be strictly positive");
        for (Index c = 0; c + 1 < k; ++c) theta[at++] = std::log(model.transition(p.state, c) / last);
        break;
      }
    }
  }
  return theta;
}

HmmModel unpack(const HmmModel& base, const ParamSelector& selector, const Vector& theta) {
  const Index k = base.states();
  if (theta.size() != selector.dimension(k)) throw std::invalid_argument("unpack: parameter vector has the wrong size");
  HmmModel model = base;
  Index at = 0;
  for (const auto& p : selector.params()) {
    check_state(p, k);
    switch (p.kind) {
      case ParamKind::mean: model.means[p.state] = theta[at++]; break;
      case ParamKind::stddev: model.stds[p.state] = std::exp(theta[at++]); break;
      case ParamKind::transition_row: {
        Vector logits(k);
        logits.head(k - 1) = theta.segment(at, k - 1);
        logits[k - 1] = 0.0;
        at += k - 1;
        const Vector w = (logits.array() - logits.maxCoeff()).exp().matrix();
        model.transition.row(p.state) = (w / w.sum()).transpose();
        break;
      }
    }
  }
  return model;
}

Vector natural_values(const HmmModel& model, const ParamSelector& selector) {
  const Index k = model.states();
  Vector out(selector.dimension(k));
  Index at = 0;
  for (const auto& p : selector.params()) {
    check_state(p, k);
    switch (p.kind) {
      case ParamKind::mean: out[at++] = model.means[p.state]; break;
      case ParamKind::stddev: out[at++] = model.stds[p.state]; break;
      case ParamKind::transition_row:
        for (Index c = 0; c + 1 < k; ++c) out[at++] = model.transition(p.state, c);
        break;
    }
  }
  return out;
}

EmissionDerivative d_emission(const HmmModel& model, Index state, double y) {
  const double density = emission_density(model, state, y);
  const double sigma = model.stds[state];
  const double diff = y - model.means[state];
  return {density * diff / (sigma * sigma), density * (diff * diff / (sigma * sigma * sigma) - 1.0 / sigma)};
}

Vector term_gradient(const HmmModel& model, const ObservationSequence& obs, std::size_t j,
                     const StateDistribution& rho_prev, const StateDistribution& beta_j,
                     const ParamSelector& selector) {
  if (j >= obs.size()) throw std::out_of_range("term_gradient: index out of range");
  for (const auto& p : selector.params()) check_state(p, model.states());
  return term_from_vectors(model, obs[j], rho_prev.probs(), beta_j.probs(), selector);
}

Vector restricted_gradient(const HmmModel& model, const ObservationSequence& obs, const ParamSelector& selector,
                           std::size_t first, std::size_t last) {
  if (first > last || last >= obs.size()) throw std::out_of_range("restricted_gradient: bad index range");
  for (const auto& p : selector.params()) check_state(p, model.states());
  const FilterRun forward = forward_filter(model, obs);
  const BackwardRun backward = backward_filter(model, obs);
  Vector sum = Vector::Zero(selector.dimension(model.states()));
  for (std::size_t j = first; j <= last; ++j) {
    const Vector& rho_prev = j == 0 ? model.initial : forward.rhos[j - 1].probs();
    sum += term_from_vectors(model, obs[j], rho_prev, backward.betas[j].probs(), selector);
  }
  return sum;
}

Vector full_gradient(const HmmModel& model, const ObservationSequence& obs, const ParamSelector& selector) {
  return restricted_gradient(model, obs, selector, 0, obs.size() - 1);
}

GradientReport minibatch_gradient(const HmmModel& model, const ObservationSequence& obs,
                                  const ParamSelector& selector, const MinibatchOptions& options) {
  const std::size_t n = obs.size();
  const std::size_t s = options.batch_size;
  if (s == 0) throw std::invalid_argument("minibatch_gradient: batch size must be positive");
  if (options.b1 + options.b2 + 2 > n) throw std::invalid_argument("minibatch_gradient: buffers leave no sampling range");
  for (const auto& p : selector.params()) check_state(p, model.states());

  GradientReport report;
  report.range_first = options.b1;
  report.range_last = n - options.b2 - 2;
  const std::size_t range = report.range_last - report.range_first + 1;
  if (s > range) throw std::invalid_argument("minibatch_gradient: batch larger than the sampling range");
  report.scale = static_cast<double>(range) / static_cast<double>(s);

  Rng rng(options.seed);
  report.indices = draw_indices(rng, report.range_first, report.range_last, s, options.b1 + options.b2,
                                options.non_overlapping);
  report.terms.resize(s);
  std::vector<std::uint64_t> work(s, 0);

  auto compute = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::size_t j = report.indices[i];
      const std::size_t left = options.exact_windows ? j : options.b1;
      const std::size_t right = options.exact_windows ? n - 1 - j : options.b2;
      OpCounter counter;
      const StateDistribution rho = buffered_forward(model, obs, j, left, &counter);
      const StateDistribution beta = buffered_backward(model, obs, j, right, &counter);
      report.terms[i] = term_from_vectors(model, obs[j], rho.probs(), beta.probs(), selector);
      work[i] = counter.matvec + 1;
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(s)));
  if (threads == 1) {
    compute(0, s);
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (s + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(s, begin + chunk);
      if (begin < end) pool.emplace_back(compute, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  // ordered reduction keeps results independent of the thread count
  const Index dim = selector.dimension(model.states());
  Vector sum = Vector::Zero(dim);
  for (const Vector& term : report.terms) sum += term;
  report.gradient = report.scale * sum;
  for (auto w : work) report.matvec_products += w;

  report.variance = Vector::Constant(dim, std::numeric_limits<double>::quiet_NaN());
  if (s >= 2) {
    const Vector mean = sum / static_cast<double>(s);
    Vector sq = Vector::Zero(dim);
    for (const Vector& term : report.terms) sq += (term - mean).cwiseAbs2();
    const Vector sample_var = sq / static_cast<double>(s - 1);
    const double fpc = 1.0 - static_cast<double>(s) / static_cast<double>(range);
    const double r = static_cast<double>(range);
    report.variance = sample_var * (r * r * fpc / static_cast<double>(s));
  }
  return report;
}

SgdResult sgd_infer(const HmmModel& model0, const ObservationSequence& obs, const ParamSelector& selector,
                    const SgdConfig& config) {
  if (selector.empty()) throw std::invalid_argument("sgd_infer: no free parameters");
  if (!(config.eta0 > 0.0) || !(config.decay > 0.0 && config.decay < 1.0) || config.steps_per_restart == 0 ||
      !(config.restart_threshold > 0.0) || config.batch_size == 0 || config.max_restarts == 0)
    throw std::invalid_argument("sgd_infer: invalid configuration");
  const auto violations = validate(model0);
  if (!violations.empty()) throw ModelError("sgd_infer: invalid starting model", violations);

  SgdResult result;
  HmmModel model = model0;
  Vector theta = pack(model, selector);
  Vector natural = natural_values(model, selector);

  double best_probe = probe_loglik(model, obs, config.probe_length);
  result.trace.push_back({0, 0, natural, 0.0, best_probe});

  std::optional<ObservationSequence> gap_obs;
  if (!config.b1 || !config.b2) {
    const std::size_t len = std::min(obs.size(), config.gap_window);
    const auto w = obs.window(0, len);
    gap_obs.emplace(std::vector<double>(w.begin(), w.end()));
  }

  std::size_t global_step = 0;
  for (std::size_t restart = 1; restart <= config.max_restarts; ++restart) {
    result.restarts = restart;
    // buffers are refreshed once per restart; the spectrum varies continuously in theta
    std::size_t b1 = config.b1.value_or(0);
    std::size_t b2 = config.b2.value_or(0);
    if (gap_obs) {
      const std::uint64_t gap_seed = derive_seed(config.seed, 1000000 + restart);
      const std::size_t burn = std::min<std::size_t>(kDefaultBurnIn, gap_obs->size() / 10);
      if (!config.b1) {
        b1 = estimate_gap(model, *gap_obs, burn, gap_seed).buffer_length(config.epsilon);
        result.gap_matvecs += gap_obs->size();
      }
      if (!config.b2) {
        b2 = estimate_backward_gap(model, *gap_obs, burn, gap_seed).buffer_length(config.epsilon);
        result.gap_matvecs += gap_obs->size();
      }
    }
    result.b1 = b1;
    result.b2 = b2;

    const Vector natural_at_restart = natural;
    for (std::size_t t = 0; t < config.steps_per_restart; ++t) {
      const double exponent = static_cast<double>(config.reset_eta_on_restart ? t : global_step);
      const double eta = config.eta0 * std::pow(config.decay, exponent);
      ++global_step;

      MinibatchOptions mb;
      mb.batch_size = config.batch_size;
      mb.b1 = b1;
      mb.b2 = b2;
      mb.seed = derive_seed(config.seed, global_step);
      mb.non_overlapping = config.non_overlapping;
      mb.threads = config.threads;
      const GradientReport report = minibatch_gradient(model, obs, selector, mb);
      result.matvec_products += report.matvec_products;

      const double norm = report.gradient.norm();
      if (!std::isfinite(norm)) throw NumericalError("sgd_infer: non-finite gradient estimate");
      if (norm > 0.0) theta += eta * report.gradient / norm;
      model = unpack(model, selector, theta);
      natural = natural_values(model, selector);

      const double probe = probe_loglik(model, obs, config.probe_length);
      result.trace.push_back({restart, global_step, natural, eta, probe});
      if (probe < best_probe - config.divergence_nats)
        throw NumericalError("sgd_infer: probe log-likelihood dropped by more than " +
                             std::to_string(config.divergence_nats) + " nats; aborting");
      best_probe = std::max(best_probe, probe);
    }
    result.steps = global_step;
    if ((natural - natural_at_restart).lpNorm<Eigen::Infinity>() < config.restart_threshold) {
      result.converged = true;
      break;
    }
  }
  result.model = std::move(model);
  result.theta = std::move(natural);
  return result;
}

}  // namespace hmmforget
