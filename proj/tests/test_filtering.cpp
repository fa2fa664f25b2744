#include <doctest.h>

#include <algorithm>

#include "hmmforget/filtering.hpp"
#include "hmmforget/sampling.hpp"
#include "oracles.hpp"

using namespace hmmforget;

namespace {

HmmModel two_state(double a, double b, double mu0 = 0.0, double mu1 = 1.0) {
  Matrix m(2, 2);
  m << a, 1.0 - a, 1.0 - b, b;
  return make_model(m, Vector{{mu0, mu1}}, Vector{{1.0, 0.7}}, Vector{{0.3, 0.7}});
}

}  // namespace

TEST_CASE("forward_step trivial dynamics") {
  HmmModel id;
  id.transition = Matrix::Identity(3, 3);
  id.means = Vector::Zero(3);
  id.stds = Vector::Ones(3);
  id.initial = Vector::Constant(3, 1.0 / 3.0);
  const auto rho = StateDistribution::normalized(Vector{{0.2, 0.3, 0.5}});
  const auto step = forward_step(rho, id, 0.4);
  CHECK((step.rho.probs() - rho.probs()).norm() < 1e-15);
  CHECK(step.log_norm == doctest::Approx(oracle::gauss_logpdf(0.4, 0.0, 1.0)).epsilon(1e-14));

  HmmModel swap = id;
  swap.transition = Matrix{{0.0, 1.0}, {1.0, 0.0}};
  swap.means = Vector::Zero(2);
  swap.stds = Vector::Ones(2);
  const auto s = forward_step(StateDistribution(Vector{{1.0, 0.0}}), swap, -1.0);
  CHECK(s.rho[0] == 0.0);
  CHECK(s.rho[1] == 1.0);
}

TEST_CASE("forward_step matches an unnormalized product") {
  const HmmModel ex = example_model();
  const Vector u = Vector::Constant(3, 1.0 / 3.0).transpose() * ex.transition * emission_matrix(ex, 0.0);
  const auto step = forward_step(StateDistribution::uniform(3), ex, 0.0);
  CHECK(((step.rho.probs() - u / u.sum()).array().abs() / (u / u.sum()).array()).maxCoeff() < 1e-12);
  CHECK(std::abs(step.log_norm - std::log(u.sum())) < 1e-12);
}

TEST_CASE("forward_filter likelihood") {
  const HmmModel ex = example_model();
  const ObservationSequence one(std::vector<double>{0.7});
  const Vector u = ex.initial.transpose() * ex.transition * emission_matrix(ex, 0.7);
  CHECK(forward_filter(ex, one).log_likelihood == doctest::Approx(std::log(u.sum())).epsilon(1e-14));

  const HmmModel iid = make_model(Matrix::Ones(1, 1), Vector{{0.3}}, Vector{{1.5}});
  const auto obs1 = sample_sequence(iid, 50, 1).observations;
  double expected = 0.0;
  for (double y : obs1.values()) expected += oracle::gauss_logpdf(y, 0.3, 1.5);
  CHECK(forward_filter(iid, obs1).log_likelihood == doctest::Approx(expected).epsilon(1e-12));

  const auto obs = sample_sequence(ex, 1000, 17).observations;
  const auto run = forward_filter(ex, obs);
  CHECK(std::abs(run.log_likelihood - oracle::loglik(ex, oracle::to_std(obs))) < 1e-8);
  double sum = 0.0;
  for (double v : run.per_step_log_norms) sum += v;
  CHECK(sum == run.log_likelihood);
  CHECK(run.rhos.size() == 1000);
}

TEST_CASE("filtered and smoothed distributions match path enumeration") {
  const HmmModel m = two_state(0.8, 0.6);
  const std::vector<double> y{0.2, 1.4, -0.3};
  const ObservationSequence obs(y);
  const auto p = oracle::params_of(m);
  const auto fwd = forward_filter(m, obs);
  const auto bwd = backward_filter(m, obs);
  const auto truth = oracle::smoothed(p, y);
  for (std::size_t t = 0; t < y.size(); ++t) {
    const auto filt = oracle::filtered(p, y, t + 1);
    const auto sm = smoothed_posterior(fwd.rhos[t], bwd.betas[t]);
    for (Index i = 0; i < 2; ++i) {
      CHECK(fwd.rhos[t][i] == doctest::Approx(filt[i]).epsilon(1e-12));
      CHECK(sm[i] == doctest::Approx(truth[t][i]).epsilon(1e-12));
    }
  }
  CHECK(bwd.betas.back()[0] == 0.5);
}

TEST_CASE("backward filter matches renormalized right products") {
  const HmmModel ex = example_model();
  const auto obs = sample_sequence(ex, 1000, 23).observations;
  const auto bwd = backward_filter(ex, obs);
  Vector b = Vector::Ones(3);
  for (std::size_t i = obs.size() - 1; i-- > 0;) {
    b = ex.transition * emission_matrix(ex, obs[i + 1]) * b;
    b /= b.sum();
    REQUIRE((bwd.betas[i].probs() - b).cwiseAbs().maxCoeff() < 1e-10);
  }
  const HmmModel one = make_model(Matrix::Ones(1, 1), Vector::Zero(1), Vector::Ones(1));
  for (const auto& beta : backward_filter(one, obs).betas) CHECK(beta[0] == 1.0);
}

TEST_CASE("smoothing edge cases") {
  const auto rho = StateDistribution::normalized(Vector{{1.0, 2.0, 3.0}});
  const auto beta = StateDistribution::normalized(Vector{{5.0, 1.0, 1.0}});
  CHECK((smoothed_posterior(rho, StateDistribution::uniform(3)).probs() - rho.probs()).norm() < 1e-15);
  CHECK((smoothed_posterior(StateDistribution::uniform(3), beta).probs() - beta.probs()).norm() < 1e-15);
}

TEST_CASE("streaming filter agrees with the stored run") {
  const HmmModel ex = example_model();
  const auto obs = sample_sequence(ex, 2000, 4).observations;
  const auto run = forward_filter(ex, obs);
  const auto summary = forward_filter_streaming(ex, obs);
  CHECK(summary.log_likelihood == run.log_likelihood);
  CHECK(summary.n == 2000);
  CHECK((summary.final_rho.probs() - run.rhos.back().probs()).norm() == 0.0);
  StreamingFilter f(ex);
  f.push(obs[0]);
  CHECK(f.steps() == 1);
  CHECK((f.rho() - run.rhos[0].probs()).norm() == 0.0);
}

TEST_CASE("buffered windows") {
  const HmmModel ex = example_model();
  const auto obs = sample_sequence(ex, 1200, 31).observations;
  const auto fwd = forward_filter(ex, obs);
  const auto bwd = backward_filter(ex, obs);

  // full prefix and full suffix reproduce the exact quantities
  OpCounter ops;
  const auto full_prefix = buffered_forward(ex, obs, 600, 600, &ops);
  CHECK((full_prefix.probs() - fwd.rhos[599].probs()).norm() < 1e-15);
  CHECK(ops.matvec == 600);
  const auto full_suffix = buffered_backward(ex, obs, 600, 599);
  CHECK((full_suffix.probs() - bwd.betas[600].probs()).norm() < 1e-15);
  CHECK((buffered_backward(ex, obs, 10, 0).probs() - StateDistribution::uniform(3).probs()).norm() == 0.0);
  CHECK((buffered_forward(ex, obs, 0, 0).probs() - ex.initial).norm() == 0.0);

  // a 200-step window is exact to double precision for a typical j; the
  // finite-time contraction fluctuates, so the worst j is far less accurate
  std::vector<double> fe, be;
  for (std::size_t j = 300; j < 900; ++j) {
    fe.push_back((buffered_forward(ex, obs, j, 200).probs() - fwd.rhos[j - 1].probs()).norm());
    be.push_back((buffered_backward(ex, obs, j, 200).probs() - bwd.betas[j].probs()).norm());
  }
  std::nth_element(fe.begin(), fe.begin() + 300, fe.end());
  std::nth_element(be.begin(), be.begin() + 300, be.end());
  CHECK(fe[300] < 1e-15);
  CHECK(be[300] < 1e-15);
  CHECK(*std::max_element(fe.begin(), fe.end()) < 1e-8);
  CHECK((buffered_forward(ex, obs, 500, 1).probs() - fwd.rhos[499].probs()).norm() > 1e-6);

  CHECK_THROWS_AS(buffered_forward(ex, obs, 10, 11), std::out_of_range);
  CHECK_THROWS_AS(buffered_backward(ex, obs, 1199, 1), std::out_of_range);
}

TEST_CASE("extreme observations do not break the filter") {
  const HmmModel ex = example_model();
  const ObservationSequence obs(std::vector<double>{1e6, -1e6, 40.0, 0.0});
  const auto run = forward_filter(ex, obs);
  CHECK(std::isfinite(run.log_likelihood));
  for (const auto& r : run.rhos) CHECK(std::abs(r.probs().sum() - 1.0) < 1e-12);
}
