#include <doctest.h>

#include <filesystem>
#include <set>

#include "hmmforget/random.hpp"
#include "hmmforget/sampling.hpp"

using namespace hmmforget;

TEST_CASE("single-state chain gives standard normal observations") {
  const HmmModel m = make_model(Matrix::Ones(1, 1), Vector::Zero(1), Vector::Ones(1));
  const auto s = sample_sequence(m, 200000, 3);
  for (Index x : s.states) REQUIRE(x == 0);
  double mean = 0.0, sq = 0.0;
  for (double y : s.observations.values()) {
    mean += y;
    sq += y * y;
  }
  mean /= 200000.0;
  sq /= 200000.0;
  CHECK(std::abs(mean) < 0.01);
  CHECK(std::abs(sq - 1.0) < 0.015);
}

TEST_CASE("absorbing start state stays put") {
  Matrix m(3, 3);
  m << 0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0;
  const HmmModel model = make_model(m, Vector::Zero(3), Vector::Ones(3), Vector{{0.0, 0.0, 1.0}});
  const auto s = sample_sequence(model, 500, 11);
  for (Index x : s.states) REQUIRE(x == 2);
}

TEST_CASE("empirical state frequencies approach the stationary law") {
  const HmmModel ex = example_model();
  const auto s = sample_sequence(ex, 100000, 42);
  Vector freq = Vector::Zero(3);
  for (Index x : s.states) freq[x] += 1.0;
  freq /= 100000.0;
  const auto pi = stationary_distribution(ex.transition);
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(freq[i] - pi[i]) < 0.01);
}

TEST_CASE("sampling is deterministic per seed") {
  const HmmModel ex = example_model();
  const auto a = sample_sequence(ex, 1000, 5);
  const auto b = sample_sequence(ex, 1000, 5);
  const auto c = sample_sequence(ex, 1000, 6);
  CHECK(a.states == b.states);
  CHECK(std::equal(a.observations.values().begin(), a.observations.values().end(), b.observations.values().begin()));
  CHECK(a.states != c.states);
  CHECK(a.seed == 5);
}

TEST_CASE("observation files round trip bit for bit") {
  const auto obs = sample_sequence(example_model(), 300, 9).observations;
  const auto dir = std::filesystem::temp_directory_path();
  for (auto fmt : {ObservationFormat::text, ObservationFormat::binary}) {
    const auto path = dir / (fmt == ObservationFormat::text ? "hf_obs.txt" : "hf_obs.bin");
    write_observations(path, obs, fmt);
    const auto back = read_observations(path, fmt);
    REQUIRE(back.size() == obs.size());
    for (std::size_t i = 0; i < obs.size(); ++i) REQUIRE(back[i] == obs[i]);
    std::filesystem::remove(path);
  }
}

TEST_CASE("random utilities") {
  Rng a(1), b(1);
  for (int i = 0; i < 10; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(derive_seed(7, 0) != derive_seed(7, 1));
  Rng r(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = r.uniform_open();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(r.below(7) < 7);
  }
  const auto pick = sample_without_replacement(r, 10, 19, 10);
  CHECK(pick == std::vector<std::size_t>{10, 11, 12, 13, 14, 15, 16, 17, 18, 19});

  // each index is equally likely
  std::vector<int> hits(20, 0);
  for (int t = 0; t < 20000; ++t)
    for (auto i : sample_without_replacement(r, 0, 19, 5)) ++hits[i];
  for (int h : hits) CHECK(std::abs(h - 5000) < 300);
  const auto s = sample_without_replacement(r, 0, 99, 30);
  CHECK(std::set<std::size_t>(s.begin(), s.end()).size() == 30);
  CHECK_THROWS(sample_without_replacement(r, 0, 3, 5));
}
