#include "helpers.hpp"
#include "scorelab/oracle.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace scorelab;
using scorelab::testing::vec;

namespace {

GeneratorSpec affine_half() {
  Matrix A(1, 1);
  A << 0.5;
  return GeneratorSpec::affine(vec({0.0}), A);
}

}  // namespace

TEST_CASE("Gauss-Legendre rule on the unit interval") {
  const QuadratureRule r = gauss_legendre_unit(3);
  CHECK(r.weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
  const double i5 = (r.weights.array() * r.nodes.array().pow(5)).sum();
  CHECK(i5 == doctest::Approx(1.0 / 6.0).epsilon(1e-14));
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(r.nodes(i) + r.nodes(2 - i) - 1.0) < 1e-15);
}

TEST_CASE("effective variance") {
  const auto g = scorelab::testing::circle();
  const auto noise = NoiseConfig::make(0.4, 0.4);
  CHECK(make_context(g, noise).sigma_eff_sq == doctest::Approx(0.16).epsilon(1e-15));
  const OracleContext ct = make_context(g, noise, std::log(2.0));
  CHECK(ct.sigma_eff_sq == doctest::Approx(0.79).epsilon(1e-14));
  CHECK(ct.gen_scale == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(make_context(g, noise, 0.0), std::domain_error);
}

TEST_CASE("latent dimension above 3 is rejected") {
  Matrix A = Matrix::Identity(4, 4) * 0.1;
  CHECK_THROWS_AS(make_context(GeneratorSpec::affine(Vector::Zero(4), A), NoiseConfig::make(0.4, 0.4)),
                  std::invalid_argument);
}

TEST_CASE("constant generator needs a single atom") {
  const Vector c = vec({0.3, -0.2});
  const OracleContext ctx = make_context(GeneratorSpec::constant(c), NoiseConfig::make(0.4, 0.4));
  CHECK(ctx.node_count() == 1);
  const Vector w = posterior_weights(ctx, vec({1.0, 2.0}));
  REQUIRE(w.size() == 1);
  CHECK(w(0) == 1.0);
}

TEST_CASE("quadrature weights and convergence") {
  const OracleContext ctx = make_context(scorelab::testing::circle(), NoiseConfig::make(0.3, 0.3));
  CHECK(std::abs(ctx.weights.sum() - 1.0) <= 1e-12);
  CHECK(ctx.achieved_tol <= ctx.tol);
  CHECK(ctx.sigma_eff_sq > 0.0);
}

TEST_CASE("posterior weights are symmetric for mirrored branches") {
  Matrix A(1, 1);
  A << 1.0;
  const OracleContext ctx = make_context(GeneratorSpec::affine(vec({-0.5}), A), NoiseConfig::make(0.3, 0.3));
  const Vector w = posterior_weights(ctx, vec({0.0}));
  const Index n = w.size();
  for (Index i = 0; i < n; ++i) CHECK(std::abs(w(i) - w(n - 1 - i)) < 1e-12);
  CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("posterior weights stay finite far from the data") {
  const OracleContext ctx = make_context(scorelab::testing::circle(), NoiseConfig::make(0.1, 0.1));
  const Vector w = posterior_weights(ctx, vec({1e6, 0.0}));
  CHECK(w.allFinite());
  CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(true_score(ctx, vec({1e6, 0.0})).allFinite());
  CHECK(std::isfinite(log_density(ctx, vec({1e6, 0.0}))));
}

TEST_CASE("constant generator score and Jacobian are Gaussian") {
  const Vector c = vec({0.3, -0.2});
  const OracleContext ctx = make_context(GeneratorSpec::constant(c), NoiseConfig::make(0.4, 0.4));
  const Vector y = vec({0.9, 0.25});
  const Vector expected = (c - y) / 0.16;
  const Vector s = true_score(ctx, y);
  CHECK((s - expected).cwiseAbs().maxCoeff() <= 1e-12);
  const Matrix J = true_score_jacobian(ctx, y);
  CHECK((J + Matrix::Identity(2, 2) / 0.16).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("posterior mean is the branch midpoint on the symmetry axis") {
  Matrix freq(1, 1);
  freq << 1.0;
  const auto g = GeneratorSpec::trigonometric(vec({0.5}), freq, vec({0.0}));
  const OracleContext ctx = make_context(g, NoiseConfig::make(0.3, 0.3));
  CHECK(std::abs(posterior_mean_generator(ctx, vec({0.0}))(0)) < 1e-12);
}

TEST_CASE("affine score matches a brute-force midpoint quadrature") {
  const double sigma = 0.3, y = 0.7;
  const OracleContext ctx = make_context(affine_half(), NoiseConfig::make(sigma, sigma));
  const int N = 1000000;
  double z = 0.0, m = 0.0;
  for (int i = 0; i < N; ++i) {
    const double g = 0.5 * (i + 0.5) / N;
    const double w = std::exp(-(y - g) * (y - g) / (2 * sigma * sigma));
    z += w;
    m += w * g;
  }
  const double ref = (m / z - y) / (sigma * sigma);
  CHECK(true_score(ctx, vec({y}))(0) == doctest::Approx(ref).epsilon(1e-8));
}

TEST_CASE("score is the gradient of the log density and the Jacobian is symmetric") {
  for (double t : {0.0, std::log(2.0)}) {
    const OracleContext ctx = make_context(scorelab::testing::circle(), NoiseConfig::make(0.35, 0.35),
                                           t > 0 ? std::optional<double>(t) : std::nullopt);
    const Matrix Y = sample_marginal(ctx, 20, 4);
    for (Index r = 0; r < Y.rows(); ++r) {
      const Vector y = Y.row(r).transpose();
      const auto sj = true_score_with_jacobian(ctx, y);
      CHECK((sj.score - true_score(ctx, y)).norm() == 0.0);
      for (Index i = 0; i < 2; ++i) {
        const double h = 1e-3;
        Vector a = y, b = y, c = y, d = y;
        a(i) += 2 * h;
        b(i) += h;
        c(i) -= h;
        d(i) -= 2 * h;
        const double fd =
            (-log_density(ctx, a) + 8 * log_density(ctx, b) - 8 * log_density(ctx, c) + log_density(ctx, d)) / (12 * h);
        CHECK(std::abs(fd - sj.score(i)) < 1e-6);
        const double e = 1e-4;
        Vector p = y, q = y;
        p(i) += e;
        q(i) -= e;
        const Vector col = (true_score(ctx, p) - true_score(ctx, q)) / (2 * e);
        CHECK((col - sj.jacobian.col(i)).cwiseAbs().maxCoeff() < 1e-5);
      }
      const Matrix J = true_score_jacobian(ctx, y);
      CHECK((J - J.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("derivative bound is tight for a constant generator") {
  const Vector c = vec({0.3, -0.2});
  const OracleContext ctx = make_context(GeneratorSpec::constant(c), NoiseConfig::make(0.4, 0.4));
  const DerivativeBound b = check_derivative_bound(ctx, vec({1.2, -0.7}), 1);
  CHECK(b.lhs == doctest::Approx(c.norm() / 0.16).epsilon(1e-12));
  CHECK(b.rhs == doctest::Approx(c.norm() / 0.16).epsilon(1e-12));
  CHECK(b.holds);
  CHECK_THROWS(check_derivative_bound(ctx, c, 3));
}

TEST_CASE("derivative bounds hold at random points") {
  const OracleContext ctx = make_context(scorelab::testing::trig4(), NoiseConfig::make(0.3, 0.3));
  const Matrix Y = sample_marginal(ctx, 200, 8);
  for (Index r = 0; r < Y.rows(); ++r) {
    CHECK(check_derivative_bound(ctx, Y.row(r).transpose(), 1).holds);
    CHECK(check_derivative_bound(ctx, Y.row(r).transpose(), 2).holds);
  }
}

TEST_CASE("marginal samples at time t have the OU moments") {
  const Vector c = vec({0.3, -0.2});
  const OracleContext ctx = make_context(GeneratorSpec::constant(c), NoiseConfig::make(0.4, 0.4), std::log(2.0));
  const Matrix Y = sample_marginal(ctx, 100000, 2);
  const Vector mean = Y.colwise().mean().transpose();
  for (Index j = 0; j < 2; ++j) {
    CHECK(std::abs(mean(j) - 0.5 * c(j)) < 3.0 * std::sqrt(0.79 / 1e5));
    const double var = (Y.col(j).array() - mean(j)).square().mean();
    CHECK(std::abs(var / 0.79 - 1.0) < 0.05);
  }
}
