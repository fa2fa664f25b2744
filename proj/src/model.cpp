#include "hmmforget/model.hpp"

#include <cmath>

namespace hmmforget {

namespace {

constexpr double kLogSqrtTwoPi = 0.91893853320467274178;  // ln sqrt(2 pi)
constexpr long kStationaryIterationCap = 1000000;

bool near_stochastic(const Vector& row) {
  if (!row.allFinite() || (row.array() < 0.0).any()) return false;
  return std::abs(row.sum() - 1.0) <= kSimplexTolerance;
}

using Pattern = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

Pattern boolean_product(const Pattern& a, const Pattern& b) {
  const Index k = a.rows();
  Pattern out = Pattern::Constant(k, k, false);
  for (Index i = 0; i < k; ++i)
    for (Index l = 0; l < k; ++l)
      if (a(i, l))
        for (Index j = 0; j < k; ++j) out(i, j) = out(i, j) || b(l, j);
  return out;
}

}  // namespace

StateDistribution::StateDistribution(Vector probs) : probs_(std::move(probs)) {
  if (probs_.size() == 0) throw ModelError("state distribution is empty");
  if (!near_stochastic(probs_)) throw ModelError("state distribution is not on the simplex");
}

StateDistribution StateDistribution::uniform(Index k) {
  StateDistribution d;
  d.probs_ = Vector::Constant(k, 1.0 / static_cast<double>(k));
  return d;
}

StateDistribution StateDistribution::normalized(const Vector& weights) {
  const double total = weights.sum();
  if (!(total > 0.0) || !std::isfinite(total) || (weights.array() < 0.0).any())
    throw NumericalError("cannot normalize weights: total mass is not positive and finite");
  StateDistribution d;
  d.probs_ = weights / total;
  return d;
}

ObservationSequence::ObservationSequence(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) throw ModelError("observation sequence is empty");
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (!std::isfinite(values_[i]))
      throw ModelError("observation " + std::to_string(i) + " is not finite");
}

std::span<const double> ObservationSequence::window(std::size_t first, std::size_t count) const {
  if (first > values_.size() || count > values_.size() - first)
    throw std::out_of_range("observation window out of range");
  return std::span<const double>(values_).subspan(first, count);
}

std::vector<std::string> validate(const HmmModel& model) {
  std::vector<std::string> out;
  const Index k = model.transition.rows();
  if (k == 0) {
    out.emplace_back("model has no states");
    return out;
  }
  if (model.transition.cols() != k) {
    out.emplace_back("transition must be square");
    return out;
  }
  for (Index i = 0; i < k; ++i)
    if (!near_stochastic(model.transition.row(i).transpose()))
      out.push_back("row " + std::to_string(i) + " not stochastic");
  for (Index j = 0; j < k; ++j)
    if ((model.transition.col(j).array() == 0.0).all())
      out.push_back("column " + std::to_string(j) + " all zero");

  if (model.means.size() != k) {
    out.emplace_back("means must have one entry per state");
  } else if (!model.means.allFinite()) {
    out.emplace_back("means must be finite");
  }
  if (model.stds.size() != k) {
    out.emplace_back("stds must have one entry per state");
  } else if (!model.stds.allFinite() || (model.stds.array() <= 0.0).any()) {
    out.emplace_back("stds must be strictly positive");
  }
  if (model.initial.size() != k) {
    out.emplace_back("initial must have one entry per state");
  } else if (!near_stochastic(model.initial)) {
    out.emplace_back("initial not a probability distribution");
  }
  return out;
}

HmmModel make_model(Matrix transition, Vector means, Vector stds, Vector initial) {
  HmmModel model{std::move(transition), std::move(means), std::move(stds), std::move(initial)};
  if (model.initial.size() == 0 && model.transition.rows() > 0)
    model.initial = Vector::Constant(model.transition.rows(), 1.0 / static_cast<double>(model.transition.rows()));
  auto violations = validate(model);
  if (!violations.empty()) {
    std::string msg = "invalid model:";
    for (const auto& v : violations) msg += " " + v + ";";
    throw ModelError(msg, std::move(violations));
  }
  for (Index i = 0; i < model.states(); ++i) model.transition.row(i) /= model.transition.row(i).sum();
  model.initial /= model.initial.sum();
  return model;
}

bool is_primitive(const Matrix& transition) {
  const Index k = transition.rows();
  if (transition.cols() != k) throw std::invalid_argument("is_primitive: transition matrix is not square");
  if (k == 0) return false;

  const Pattern base = (transition.array() > 0.0).matrix();
  // Wielandt: a primitive K x K matrix has M^(K^2-2K+2) > 0, and the bound is tight.
  long exponent = static_cast<long>(k) * k - 2 * static_cast<long>(k) + 2;
  Pattern result = Pattern::Identity(k, k);
  Pattern power = base;
  while (exponent > 0) {
    if (exponent & 1) result = boolean_product(result, power);
    exponent >>= 1;
    if (exponent > 0) power = boolean_product(power, power);
  }
  return result.all();
}

void require_primitive(const HmmModel& model) {
  if (!is_primitive(model.transition)) throw ModelError("transition matrix is not primitive");
}

StateDistribution stationary_distribution(const Matrix& transition) {
  const Index k = transition.rows();
  if (k == 0 || transition.cols() != k) throw std::invalid_argument("stationary_distribution: bad shape");
  const Matrix mt = transition.transpose();
  Vector pi = Vector::Constant(k, 1.0 / static_cast<double>(k));
  for (long it = 0; it < kStationaryIterationCap; ++it) {
    Vector next = mt * pi;
    next /= next.sum();
    const double residual = (next - pi).lpNorm<1>();
    pi = std::move(next);
    if (residual < 1e-12) {
      // one more product so the reported vector satisfies the residual itself
      if ((mt * pi - pi).lpNorm<1>() < 1e-12) return StateDistribution::normalized(pi);
    }
  }
  throw NumericalError("stationary distribution did not converge; transition may not be primitive");
}

double log_emission_density(const HmmModel& model, Index state, double y) {
  const double sigma = model.stds[state];
  const double z = (y - model.means[state]) / sigma;
  return -0.5 * z * z - std::log(sigma) - kLogSqrtTwoPi;
}

double emission_density(const HmmModel& model, Index state, double y) {
  return std::exp(log_emission_density(model, state, y));
}

Vector log_emission_densities(const HmmModel& model, double y) {
  const auto z = (y - model.means.array()) / model.stds.array();
  return (-0.5 * z.square() - model.stds.array().log() - kLogSqrtTwoPi).matrix();
}

Vector emission_densities(const HmmModel& model, double y) {
  return log_emission_densities(model, y).array().exp().matrix();
}

Eigen::DiagonalMatrix<double, Eigen::Dynamic> emission_matrix(const HmmModel& model, double y) {
  return Eigen::DiagonalMatrix<double, Eigen::Dynamic>(emission_densities(model, y));
}

double marginal_density(const HmmModel& model, double y) {
  const StateDistribution pi = stationary_distribution(model.transition);
  return pi.probs().dot(emission_densities(model, y));
}

HmmModel example_model() {
  Matrix m(3, 3);
  m << 0.005, 0.99, 0.005,
       0.01, 0.03, 0.96,
       0.95, 0.005, 0.045;
  Vector means(3);
  means << 0.0, 0.5, -0.5;
  return make_model(std::move(m), std::move(means), Vector::Ones(3));
}

}  // namespace hmmforget
