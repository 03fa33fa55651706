#include "helpers.hpp"
#include "scorelab/generators.hpp"

#include <doctest.h>

#include <cmath>

using namespace scorelab;
using scorelab::testing::vec;

TEST_CASE("constant generator ignores u") {
  const auto g = GeneratorSpec::constant(vec({0.3, -0.2}));
  CHECK(g.latent_dim() == 0);
  const Vector y = g(Vector(0));
  CHECK(y(0) == 0.3);
  CHECK(y(1) == -0.2);
}

TEST_CASE("affine generator evaluates directly") {
  Matrix A(1, 1);
  A << 0.5;
  const auto g = GeneratorSpec::affine(vec({0.0}), A);
  CHECK(g(vec({0.4}))(0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(g.rescale_factor() == 1.0);
}

TEST_CASE("circle generator at a quarter turn") {
  const Vector y = scorelab::testing::circle()(vec({0.25}));
  CHECK(std::abs(y(0) - 0.5) < 1e-15);
  CHECK(std::abs(y(1)) < 1e-15);
}

TEST_CASE("generator rejects u outside the unit cube") {
  const auto g = scorelab::testing::circle();
  CHECK_THROWS_AS(g(vec({1.5})), std::domain_error);
}

TEST_CASE("oversized generators are rescaled into the unit ball") {
  Matrix A(2, 1);
  A << 3.0, 4.0;
  const auto g = GeneratorSpec::affine(vec({1.0, 0.0}), A);
  CHECK(g.rescale_factor() < 1.0);
  CHECK(g.sup_norm_bound() <= 1.0 + 1e-12);
  for (int i = 0; i <= 100; ++i) CHECK(g(vec({i / 100.0})).norm() <= 1.0 + 1e-12);
}

TEST_CASE("latent dimension above ambient dimension is rejected") {
  CHECK_THROWS(GeneratorSpec::affine(vec({0.0}), Matrix::Zero(1, 2)));
}

TEST_CASE("generator JSON round trip") {
  const auto g = scorelab::testing::trig4();
  const auto h = GeneratorSpec::from_json(g.to_json());
  for (double u : {0.1, 0.5, 0.93}) CHECK((g(vec({u})) - h(vec({u}))).norm() == 0.0);
  auto j = g.to_json();
  j["extra"] = 1;
  CHECK_THROWS(GeneratorSpec::from_json(j));
}

TEST_CASE("noise config validation") {
  CHECK_NOTHROW(NoiseConfig::make(0.4, 0.3));
  CHECK_THROWS(NoiseConfig::make(0.3, 0.4));
  CHECK_THROWS(NoiseConfig::make(1.0, 0.5));
  CHECK_THROWS(NoiseConfig::make(0.5, 0.0));
}

TEST_CASE("zero noise returns the generator values") {
  const auto g = GeneratorSpec::constant(vec({0.3, -0.2}));
  const DataBatch b = sample_noisy(g, 0.0, 3, 11);
  REQUIRE(b.size() == 3);
  for (Index i = 0; i < 3; ++i) {
    CHECK(b.rows(i, 0) == 0.3);
    CHECK(b.rows(i, 1) == -0.2);
  }
}

TEST_CASE("sampling is deterministic and prefix-nested") {
  const auto g = scorelab::testing::circle();
  const auto noise = NoiseConfig::make(0.4, 0.4);
  const DataBatch a = sample_noisy(g, noise, 100, 5);
  const DataBatch b = sample_noisy(g, noise, 100, 5);
  const DataBatch c = sample_noisy(g, noise, 300, 5);
  CHECK(a.rows == b.rows);
  CHECK(c.rows.topRows(100) == a.rows);
  CHECK(sample_noisy(g, noise, 100, 6).rows != a.rows);
}

TEST_CASE("noisy sample mean of a constant generator") {
  const Vector c = vec({0.3, -0.2});
  const DataBatch b = sample_noisy(GeneratorSpec::constant(c), NoiseConfig::make(0.5, 0.5), 100000, 3);
  const Vector mean = b.rows.colwise().mean().transpose();
  for (Index j = 0; j < 2; ++j) CHECK(std::abs(mean(j) - c(j)) <= 3.0 * 0.5 / std::sqrt(1e5));
}

TEST_CASE("OU coefficients") {
  auto [m0, v0] = ou_coeffs(0.0);
  CHECK(m0 == 1.0);
  CHECK(v0 == 0.0);
  auto [m, v] = ou_coeffs(std::log(2.0));
  CHECK(m == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(v == doctest::Approx(0.75).epsilon(1e-15));
  auto [mi, vi] = ou_coeffs(50.0);
  CHECK(mi < 1e-20);
  CHECK(std::abs(vi - 1.0) < 1e-20);
  CHECK_THROWS(ou_coeffs(-1.0));
}

TEST_CASE("OU pair stores its residual exactly") {
  const double t = std::log(2.0);
  const DataBatch b = sample_ou_pair(scorelab::testing::circle(), NoiseConfig::make(0.4, 0.4), t, 200, 9);
  REQUIRE(b.provenance == Provenance::ou_pair);
  REQUIRE(b.x0);
  REQUIRE(b.z);
  for (Index i = 0; i < b.size(); ++i) {
    const Vector r = ou_residual(b.rows.row(i).transpose(), b.x0->row(i).transpose(), t);
    CHECK(r == b.z->row(i).transpose());
  }
  // same seed, same clean-time draws
  CHECK(*b.x0 == sample_noisy(scorelab::testing::circle(), NoiseConfig::make(0.4, 0.4), 200, 9).rows);
}

TEST_CASE("OU pair conditional moments") {
  const double t = std::log(2.0);
  const Index n = 100000;
  const DataBatch b = sample_ou_pair(GeneratorSpec::constant(vec({0.3, -0.2})), NoiseConfig::make(0.4, 0.4), t, n, 21);
  const Matrix resid = b.rows - 0.5 * *b.x0;
  const double sigma_t = std::sqrt(0.75);
  for (Index j = 0; j < 2; ++j) {
    const Vector col = resid.col(j);
    CHECK(std::abs(col.mean()) <= 3.0 * sigma_t / std::sqrt(static_cast<double>(n)));
    const double var = (col.array() - col.mean()).square().mean();
    CHECK(std::abs(var / 0.75 - 1.0) < 0.05);
  }
}

TEST_CASE("concatenate appends rows") {
  const auto g = scorelab::testing::circle();
  const auto noise = NoiseConfig::make(0.4, 0.4);
  const DataBatch a = sample_noisy(g, noise, 4, 1);
  const DataBatch b = sample_noisy(g, noise, 6, 2);
  const DataBatch c = concatenate(a, b);
  CHECK(c.size() == 10);
  CHECK(c.rows.bottomRows(6) == b.rows);
}

TEST_CASE("batch CSV round trip is exact") {
  const DataBatch a = sample_noisy(scorelab::testing::circle(), NoiseConfig::make(0.4, 0.4), 7, 1);
  CHECK(matrix_from_csv(batch_to_csv(a.rows)) == a.rows);
}
