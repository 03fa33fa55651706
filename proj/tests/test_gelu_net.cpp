#include "helpers.hpp"
#include "scorelab/gelu_net.hpp"
#include "scorelab/training.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace scorelab;
using scorelab::testing::vec;

namespace {

NetworkParams identity_net(int D) {
  return NetworkParams({Layer{Matrix::Identity(D, D), Vector::Zero(D)}});
}

NetworkParams random_net(std::vector<int> widths, std::uint64_t seed) {
  NetworkParams p = init_params(widths, seed);
  CounterRng rng(seed + 1);
  for (auto& l : p.layers())
    for (Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.5, 0.5);
  return p;
}

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * std::numbers::pi); }

}  // namespace

TEST_CASE("GELU values at zero") {
  CHECK(gelu(0.0) == 0.0);
  CHECK(gelu_prime(0.0) == 0.5);
  CHECK(gelu_second(0.0) == doctest::Approx(2.0 * phi(0.0)).epsilon(1e-15));
  CHECK(gelu(3.0) == doctest::Approx(3.0 * 0.5 * std::erfc(-3.0 / std::sqrt(2.0))).epsilon(1e-15));
}

TEST_CASE("GELU derivatives are bounded by 2 on [-10, 10]") {
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i <= 20000; ++i) {
    const double x = -10.0 + 20.0 * i / 20000.0;
    m1 = std::max(m1, std::abs(gelu_prime(x)));
    m2 = std::max(m2, std::abs(gelu_second(x)));
  }
  CHECK(m1 <= 2.0);
  CHECK(m2 <= 2.0);
}

TEST_CASE("higher GELU derivatives follow the closed forms") {
  for (double x : {-2.3, -0.4, 0.0, 1.1, 3.7}) {
    CHECK(gelu_derivative(0, x) == gelu(x));
    CHECK(gelu_derivative(1, x) == gelu_prime(x));
    CHECK(gelu_derivative(2, x) == doctest::Approx(gelu_second(x)).epsilon(1e-14));
    CHECK(gelu_derivative(3, x) == doctest::Approx(phi(x) * (x * x * x - 4 * x)).epsilon(1e-12));
  }
}

TEST_CASE("network shape validation and summaries") {
  CHECK_THROWS(NetworkParams({Layer{Matrix::Zero(3, 2), Vector::Zero(3)}, Layer{Matrix::Zero(2, 4), Vector::Zero(2)}}));
  CHECK_THROWS(NetworkParams({Layer{Matrix::Zero(3, 2), Vector::Zero(3)}}));
  NetworkParams p = NetworkParams::zeros({2, 5, 2});
  CHECK(p.widths() == std::vector<int>{2, 5, 2});
  CHECK(p.max_width() == 5);
  CHECK(p.parameter_count() == 2 * 5 + 5 + 5 * 2 + 2);
  CHECK(p.max_abs() == 0.0);
  CHECK(p.nonzero_count() == 0);
  p.layers()[0].weight(1, 1) = -3.0;
  p.layers()[1].bias(0) = 1e-12;
  CHECK(p.max_abs() == 3.0);
  CHECK(p.nonzero_count() == 1);
}

TEST_CASE("flatten and assign are inverse") {
  const NetworkParams p = random_net({3, 4, 3}, 5);
  NetworkParams q = NetworkParams::zeros({3, 4, 3});
  q.assign(p.flatten());
  CHECK(q.flatten() == p.flatten());
  CHECK(NetworkParams::from_json(p.to_json()).flatten() == p.flatten());
}

TEST_CASE("single identity layer is the identity map") {
  const NetworkParams p = identity_net(3);
  const Vector x = vec({0.2, -1.0, 4.0});
  CHECK(net_forward(p, x) == x);
  CHECK(net_jacobian(p, x) == Matrix::Identity(3, 3));
  CHECK(net_divergence(p, x) == 3.0);
}

TEST_CASE("network derivatives match finite differences") {
  const NetworkParams p = random_net({3, 6, 6, 3}, 2);
  const Vector x = vec({0.3, -0.7, 1.2});
  const Matrix J = net_jacobian(p, x);
  const double h = 1e-4;
  double trace = 0.0;
  for (int j = 0; j < 3; ++j) {
    Vector xp = x, xm = x;
    xp(j) += h;
    xm(j) -= h;
    const Vector col = (net_forward(p, xp) - net_forward(p, xm)) / (2 * h);
    CHECK((col - J.col(j)).cwiseAbs().maxCoeff() < 1e-5);
    trace += col(j);
    const Matrix dJ = (net_jacobian(p, xp) - net_jacobian(p, xm)) / (2 * h);
    for (int i = 0; i < 3; ++i) CHECK((net_mixed_partial(p, x, {i, j}) - dJ.col(i)).cwiseAbs().maxCoeff() < 1e-5);
  }
  CHECK(std::abs(trace - net_divergence(p, x)) < 1e-5);
  CHECK(net_mixed_partial(p, x, {}) == net_forward(p, x));
}

TEST_CASE("batched tape agrees with pointwise evaluation") {
  const NetworkParams p = random_net({2, 5, 5, 2}, 7);
  Matrix X(2, 4);
  X << 0.1, -0.5, 1.0, 2.0, 0.3, 0.7, -1.2, 0.0;
  const NetworkTape tape = forward_tape(p, X, true, true);
  for (Index b = 0; b < 4; ++b) {
    const Vector x = X.col(b);
    CHECK((tape.output.col(b) - net_forward(p, x)).norm() < 1e-13);
    const Matrix J = net_jacobian(p, x);
    for (int q = 0; q < 2; ++q) CHECK((tape.output_tangent[q].col(b) - J.col(q)).norm() < 1e-13);
    for (std::size_t k = 0; k < tape.pairs.size(); ++k) {
      const auto [i, j] = tape.pairs[k];
      CHECK((tape.output_tangent2[k].col(b) - net_mixed_partial(p, x, {i, j})).norm() < 1e-12);
    }
  }
}

TEST_CASE("score model with a zero network") {
  const ScoreModel m = ScoreModel::ism(NetworkParams::zeros({2, 4, 2}), 0.3, -40.0);
  const Vector x = vec({1.5, -0.5});
  CHECK((m.value(x) + x).norm() < 1e-12);
  CHECK(m.divergence(x) == doctest::Approx(-2.0).epsilon(1e-12));
}

TEST_CASE("ISM model around an identity block cancels") {
  const ScoreModel m = ScoreModel::ism(identity_net(2), 0.3, 0.8);
  const Vector x = vec({0.4, 2.0});
  // s(x) = -a x + a x and the net coefficient equals the linear one
  CHECK(m.linear_coef() == m.net_coef());
  CHECK(m.value(x).norm() < 1e-14);
  CHECK(std::abs(m.divergence(x)) < 1e-14);
}

TEST_CASE("decoded scalars respect their ranges") {
  for (double raw : {-50.0, -2.0, 0.0, 3.0, 50.0}) {
    const ScoreModel m = ScoreModel::ism(NetworkParams::zeros({1, 1}), 0.3, raw);
    CHECK(m.a() > 1.0);
    CHECK(m.a() <= 1.0 / 0.09 + 1e-12);
    const ScoreModel d = ScoreModel::dsm(NetworkParams::zeros({1, 1}), 0.5, raw);
    CHECK(d.sigma_tilde() >= 0.0);
    CHECK(d.sigma_tilde() < 1.0);
  }
  CHECK(ScoreModel::ism(NetworkParams::zeros({1, 1}), 0.3, ScoreModel::raw_for_a(5.0, 0.3)).a() ==
        doctest::Approx(5.0).epsilon(1e-12));
  CHECK(ScoreModel::dsm(NetworkParams::zeros({1, 1}), 0.5, ScoreModel::raw_for_sigma_tilde(0.4)).sigma_tilde() ==
        doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("DSM coefficients") {
  const double t = std::log(2.0);
  const ScoreModel m = ScoreModel::dsm(NetworkParams::zeros({2, 2}), t, ScoreModel::raw_for_sigma_tilde(0.4));
  const double den = 0.25 * 0.16 + 0.75;
  CHECK(m.linear_coef() == doctest::Approx(1.0 / den).epsilon(1e-12));
  CHECK(m.net_coef() == doctest::Approx(0.5 / den).epsilon(1e-12));
}

TEST_CASE("coefficient derivatives match finite differences") {
  for (bool ism : {true, false}) {
    auto make = [&](double raw) {
      return ism ? ScoreModel::ism(NetworkParams::zeros({1, 1}), 0.3, raw)
                 : ScoreModel::dsm(NetworkParams::zeros({1, 1}), 0.7, raw);
    };
    const double raw = 0.35, h = 1e-6;
    const auto [dl, dm] = make(raw).coef_derivatives();
    CHECK(dl == doctest::Approx((make(raw + h).linear_coef() - make(raw - h).linear_coef()) / (2 * h)).epsilon(1e-6));
    CHECK(dm == doctest::Approx((make(raw + h).net_coef() - make(raw - h).net_coef()) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("score divergence equals the Jacobian trace") {
  const ScoreModel m = ScoreModel::dsm(random_net({3, 7, 3}, 4), 0.4, 0.2);
  for (double s : {-1.0, 0.0, 0.8}) {
    const Vector x = vec({s, 0.5, -s});
    CHECK(std::abs(m.divergence(x) - m.jacobian(x).trace()) < 1e-10);
  }
}

TEST_CASE("score model JSON round trip") {
  const ScoreModel m = ScoreModel::ism(random_net({2, 3, 2}, 1), 0.3, 0.4);
  const ScoreModel r = ScoreModel::from_json(m.to_json());
  CHECK(r.raw() == m.raw());
  CHECK(r.value(vec({0.1, 0.2})) == m.value(vec({0.1, 0.2})));
  auto j = m.to_json();
  j["bogus"] = true;
  CHECK_THROWS(ScoreModel::from_json(j));
}

TEST_CASE("monitors of a zero network") {
  const ScoreModel m = ScoreModel::ism(NetworkParams::zeros({2, 4, 2}), 0.3);
  const Matrix probe = Matrix::Random(16, 2);
  const MonitorReport r = sobolev_monitor(m, probe, 2);
  CHECK(r.C0_hat == 0.0);
  CHECK(r.C1_hat == 0.0);
  CHECK(r.Calpha_hat == 0.0);
  CHECK(r.violations == 0);
}

TEST_CASE("monitors of a linear network") {
  Matrix M(2, 2);
  M << 0.5, -1.5, 0.25, 1.0;
  const ScoreModel m = ScoreModel::ism(NetworkParams({Layer{M, Vector::Zero(2)}}), 0.3);
  const Matrix probe = Matrix::Random(16, 2);
  const MonitorReport r = sobolev_monitor(m, probe, 2);
  CHECK(r.C1_hat == 1.5);
  CHECK(r.Calpha_hat == 0.0);
}

TEST_CASE("order-two monitor matches a finite-difference Hessian estimate") {
  const NetworkParams p = random_net({2, 8, 8, 2}, 9);
  const ScoreModel m = ScoreModel::ism(p, 0.3);
  CounterRng rng(2);
  Matrix probe(64, 2);
  for (Index i = 0; i < probe.size(); ++i) probe.data()[i] = rng.normal();
  const MonitorReport r = sobolev_monitor(m, probe, 2);
  double best = 0.0;
  for (int l = 0; l < 2; ++l) {
    double acc = 0.0;
    for (Index b = 0; b < probe.rows(); ++b) {
      const Vector x = probe.row(b).transpose();
      const double h = 1e-4;
      Matrix H(2, 2);
      for (int q = 0; q < 2; ++q) {
        Vector xp = x, xm = x;
        xp(q) += h;
        xm(q) -= h;
        H.col(q) = ((net_jacobian(p, xp) - net_jacobian(p, xm)) / (2 * h)).row(l).transpose();
      }
      acc += H(0, 0) * H(0, 0) + H(1, 1) * H(1, 1) + H(0, 1) * H(0, 1);
    }
    best = std::max(best, std::sqrt(acc / probe.rows()));
  }
  CHECK(std::abs(r.Calpha_hat / best - 1.0) < 0.05);
}

TEST_CASE("monitor violations follow the budget") {
  const ScoreModel m = ScoreModel::ism(random_net({2, 6, 2}, 3), 0.3);
  const Matrix probe = Matrix::Random(16, 2);
  CHECK(sobolev_monitor(m, probe, 2, ScoreBudget{1e-6, 1e-6, 1e-9}).violations == 3);
  CHECK(sobolev_monitor(m, probe, 2, ScoreBudget{1e6, 1e6, 1e6}).violations == 0);
  CHECK_THROWS(sobolev_monitor(m, probe, 4));
}

TEST_CASE("perturbation audit") {
  const StabilityAudit zero = perturbation_stability_audit(random_net({2, 4, 2}, 1), 0.0, 2.0, 3, 1);
  CHECK(zero.max_gap == 0.0);
  CHECK(zero.max_div_gap == 0.0);
  CHECK(zero.holds);
  const StabilityAudit id = perturbation_stability_audit(identity_net(2), 1e-3, 2.0, 3, 2);
  CHECK(id.holds);
  CHECK(id.max_gap < 0.2 * id.bound);
  for (std::uint64_t s = 0; s < 10; ++s)
    CHECK(perturbation_stability_audit(random_net({2, 3, 3, 2}, s), 1e-2, 1.5, 2, s).holds);
  CHECK_THROWS(perturbation_stability_audit(identity_net(2), -1.0, 1.0, 1, 0));
}
