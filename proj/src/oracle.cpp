#include "scorelab/oracle.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace scorelab {

QuadratureRule gauss_legendre_unit(int n) {
  require(n >= 1, "gauss_legendre_unit: need n >= 1");
  QuadratureRule rule{Vector(n), Vector(n)};
  // Newton iteration on P_n from the Tricomi initial guesses; nodes come in symmetric pairs.
  const int half = (n + 1) / 2;
  for (int i = 0; i < half; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double derivative = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      derivative = n * (x * p1 - p0) / (x * x - 1.0);
      const double step = p1 / derivative;
      x -= step;
      if (std::abs(step) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * derivative * derivative);
    // Map [-1, 1] to [0, 1]; weights halve so they sum to 1.
    rule.nodes(i) = 0.5 * (1.0 - x);
    rule.nodes(n - 1 - i) = 0.5 * (1.0 + x);
    rule.weights(i) = 0.5 * w;
    rule.weights(n - 1 - i) = 0.5 * w;
  }
  if (n % 2 == 1) rule.nodes(n / 2) = 0.5;
  return rule;
}

namespace {

void fill_atoms(OracleContext& ctx, int per_axis) {
  const int d = ctx.spec.latent_dim();
  if (d == 0) {
    ctx.nodes = Matrix(1, 0);
    ctx.weights = Vector::Ones(1);
  } else {
    const QuadratureRule rule = gauss_legendre_unit(per_axis);
    Index total = 1;
    for (int i = 0; i < d; ++i) total *= per_axis;
    ctx.nodes.resize(total, d);
    ctx.weights.resize(total);
    for (Index flat = 0; flat < total; ++flat) {
      Index rest = flat;
      double w = 1.0;
      for (int axis = 0; axis < d; ++axis) {
        const Index k = rest % per_axis;
        rest /= per_axis;
        ctx.nodes(flat, axis) = rule.nodes(k);
        w *= rule.weights(k);
      }
      ctx.weights(flat) = w;
    }
  }
  ctx.nodes_per_axis = d == 0 ? 1 : per_axis;
  ctx.log_weights = ctx.weights.array().log().matrix();
  const Index D = ctx.spec.ambient_dim();
  ctx.atoms.resize(D, ctx.nodes.rows());
  for (Index i = 0; i < ctx.nodes.rows(); ++i) {
    const Vector u = ctx.nodes.row(i).transpose();
    ctx.atoms.col(i) = ctx.gen_scale * ctx.spec.evaluate(u);
  }
  ctx.max_atom_norm = ctx.atoms.colwise().norm().maxCoeff();
}

OracleContext base_context(const GeneratorSpec& spec, const NoiseConfig& noise,
                           std::optional<double> t) {
  require(spec.latent_dim() <= 3, "oracle: latent dimension d > 3 is unsupported");
  require(noise.sigma > 0.0 && noise.sigma < 1.0, "oracle: sigma must be in (0, 1)");
  OracleContext ctx{.spec = spec, .noise = noise, .time = t};
  if (t) {
    require_domain(*t > 0.0, "oracle: time must be positive");
    const auto [m, var] = ou_coeffs(*t);
    ctx.gen_scale = m;
    ctx.sigma_eff_sq = m * m * noise.sigma * noise.sigma + var;
  } else {
    ctx.gen_scale = 1.0;
    ctx.sigma_eff_sq = noise.sigma * noise.sigma;
  }
  return ctx;
}

Vector log_kernel(const OracleContext& ctx, const Eigen::Ref<const Vector>& y) {
  require_domain(y.size() == ctx.dim(), "oracle: point has wrong dimension");
  require_domain(y.allFinite(), "oracle: point must be finite");
  const Vector sq = (ctx.atoms.colwise() - y).colwise().squaredNorm().transpose();
  return ctx.log_weights - sq / (2.0 * ctx.sigma_eff_sq);
}

}  // namespace

Matrix sample_marginal(const OracleContext& ctx, Index n, std::uint64_t seed) {
  if (ctx.time) return sample_ou_pair(ctx.spec, ctx.noise, *ctx.time, n, seed).rows;
  return sample_noisy(ctx.spec, ctx.noise, n, seed).rows;
}

OracleContext make_context_fixed(const GeneratorSpec& spec, const NoiseConfig& noise,
                                 std::optional<double> t, int nodes_per_axis) {
  OracleContext ctx = base_context(spec, noise, t);
  fill_atoms(ctx, std::max(1, nodes_per_axis));
  return ctx;
}

OracleContext make_context(const GeneratorSpec& spec, const NoiseConfig& noise,
                           std::optional<double> t, QuadratureOptions options) {
  OracleContext ctx = base_context(spec, noise, t);
  ctx.tol = options.tol;
  if (spec.latent_dim() == 0) {
    fill_atoms(ctx, 1);
    return ctx;
  }
  // Probes from the marginal itself, with a fixed seed.
  const Matrix probes = sample_marginal(ctx, options.probe_points, 0x9a0b3e5ULL);
  auto probe_means = [&](const OracleContext& c) {
    Matrix out(probes.rows(), probes.cols());
    for (Index i = 0; i < probes.rows(); ++i)
      out.row(i) = posterior_mean_generator(c, probes.row(i).transpose()).transpose();
    return out;
  };
  int per_axis = std::max(1, options.initial_nodes);
  fill_atoms(ctx, per_axis);
  Matrix previous = probe_means(ctx);
  ctx.achieved_tol = std::numeric_limits<double>::infinity();
  while (2 * per_axis <= options.max_nodes_per_axis) {
    per_axis *= 2;
    fill_atoms(ctx, per_axis);
    const Matrix current = probe_means(ctx);
    ctx.achieved_tol = (current - previous).cwiseAbs().maxCoeff();
    previous = current;
    if (ctx.achieved_tol < options.tol) break;
  }
  return ctx;
}

Vector posterior_weights(const OracleContext& ctx, const Eigen::Ref<const Vector>& y) {
  const Vector logits = log_kernel(ctx, y);
  const double top = logits.maxCoeff();
  Vector w = (logits.array() - top).exp().matrix();
  return w / w.sum();
}

double log_density(const OracleContext& ctx, const Eigen::Ref<const Vector>& y) {
  const Vector logits = log_kernel(ctx, y);
  const double top = logits.maxCoeff();
  const double lse = top + std::log((logits.array() - top).exp().sum());
  const double D = static_cast<double>(ctx.dim());
  return -0.5 * D * std::log(2.0 * std::numbers::pi * ctx.sigma_eff_sq) + lse;
}

Vector posterior_mean_generator(const OracleContext& ctx, const Eigen::Ref<const Vector>& y) {
  return ctx.atoms * posterior_weights(ctx, y) / ctx.gen_scale;
}

Vector true_score(const OracleContext& ctx, const Eigen::Ref<const Vector>& y) {
  const Vector mean_atom = ctx.atoms * posterior_weights(ctx, y);
  return (mean_atom - y) / ctx.sigma_eff_sq;
}

ScoreWithJacobian true_score_with_jacobian(const OracleContext& ctx,
                                           const Eigen::Ref<const Vector>& y) {
  const Vector w = posterior_weights(ctx, y);
  const Vector mean_atom = ctx.atoms * w;
  const Matrix centered = ctx.atoms.colwise() - mean_atom;
  const Matrix cov = centered * w.asDiagonal() * centered.transpose();
  const double v = ctx.sigma_eff_sq;
  Matrix jac = cov / (v * v);
  jac.diagonal().array() -= 1.0 / v;
  // Symmetrize against rounding in the triple product.
  jac = 0.5 * (jac + jac.transpose()).eval();
  return {(mean_atom - y) / v, jac};
}

Matrix true_score_jacobian(const OracleContext& ctx, const Eigen::Ref<const Vector>& y) {
  return true_score_with_jacobian(ctx, y).jacobian;
}

DerivativeBound check_derivative_bound(const OracleContext& ctx, const Eigen::Ref<const Vector>& y,
                                       int k) {
  require_domain(k == 1 || k == 2, "check_derivative_bound: order must be 1 or 2");
  const double v = ctx.sigma_eff_sq;
  const double g_max = ctx.max_atom_norm;
  DerivativeBound out;
  const ScoreWithJacobian sj = true_score_with_jacobian(ctx, y);
  if (k == 1) {
    out.lhs = (sj.score + y / v).norm();
    out.rhs = g_max / v;
  } else {
    Matrix centered_part = sj.jacobian;
    centered_part.diagonal().array() += 1.0 / v;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(centered_part, Eigen::EigenvaluesOnly);
    out.lhs = eig.eigenvalues().cwiseAbs().maxCoeff();
    out.rhs = 2.0 * g_max * g_max / (v * v);
  }
  // Relative slack for the saturating case (constant generator at k = 1).
  out.holds = out.lhs <= out.rhs * (1.0 + 1e-12) + 1e-300;
  return out;
}

}  // namespace scorelab
