#ifndef HMMFORGET_MODEL_HPP_
#define HMMFORGET_MODEL_HPP_

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace hmmforget {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Tolerance on row sums / total mass of anything claiming to be a probability vector.
inline constexpr double kSimplexTolerance = 1e-12;

/// Raised when a model or distribution violates its structural invariants.
class ModelError : public std::runtime_error {
 public:
  explicit ModelError(const std::string& what) : std::runtime_error(what) {}
  ModelError(const std::string& what, std::vector<std::string> violations)
      : std::runtime_error(what), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// Raised when an iterative or floating point computation cannot produce a
/// meaningful value (non-convergence, non-finite intermediates).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A probability vector on the simplex S^{K-1}.
class StateDistribution {
 public:
  StateDistribution() = default;

  /// Checks entries >= 0 and sum = 1 within kSimplexTolerance.
  explicit StateDistribution(Vector probs);

  static StateDistribution uniform(Index k);
  /// Normalizes nonnegative weights with a positive, finite total.
  static StateDistribution normalized(const Vector& weights);

  const Vector& probs() const { return probs_; }
  Index size() const { return probs_.size(); }
  double operator[](Index i) const { return probs_[i]; }

 private:
  Vector probs_;
};

/// Ordered, finite, non-empty observation sequence y_1..y_n.
class ObservationSequence {
 public:
  ObservationSequence() = default;
  explicit ObservationSequence(std::vector<double> values);

  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  /// Observations [first, first + count).
  std::span<const double> window(std::size_t first, std::size_t count) const;

 private:
  std::vector<double> values_;
};

/// HMM with univariate Gaussian emissions. Rows of `transition` are source states.
struct HmmModel {
  Matrix transition;
  Vector means;
  Vector stds;
  Vector initial;

  Index states() const { return transition.rows(); }
};

/// All violated invariants of `model`; empty iff the model is usable.
/// Primitivity is checked separately (see is_primitive / require_primitive).
std::vector<std::string> validate(const HmmModel& model);

/// Builds a model, renormalizing rows / initial that are stochastic within
/// tolerance. Throws ModelError listing every violation otherwise.
/// An empty `initial` means uniform.
HmmModel make_model(Matrix transition, Vector means, Vector stds, Vector initial = {});

/// True iff transition^(K^2-2K+2) is entrywise positive, using the exact zero pattern.
bool is_primitive(const Matrix& transition);

/// Throws ModelError unless the transition matrix is primitive.
void require_primitive(const HmmModel& model);

/// Left fixed vector pi M = pi by power iteration (residual ||pi M - pi||_1 < 1e-12).
StateDistribution stationary_distribution(const Matrix& transition);

double log_emission_density(const HmmModel& model, Index state, double y);
double emission_density(const HmmModel& model, Index state, double y);

/// Diagonal of D(y): the K emission densities at y.
Vector emission_densities(const HmmModel& model, double y);
/// ln of the diagonal of D(y), computed without exponentiating.
Vector log_emission_densities(const HmmModel& model, double y);
Eigen::DiagonalMatrix<double, Eigen::Dynamic> emission_matrix(const HmmModel& model, double y);

/// f(y) = sum_j pi_j N(y; mu_j, sigma_j).
double marginal_density(const HmmModel& model, double y);

/// Three-state Gaussian HMM used throughout the examples and the experiments.
HmmModel example_model();

}  // namespace hmmforget

#endif  // HMMFORGET_MODEL_HPP_
