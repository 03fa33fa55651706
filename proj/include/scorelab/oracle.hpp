#pragma once

#include "scorelab/core.hpp"
#include "scorelab/generators.hpp"

#include <optional>

namespace scorelab {

/// Gauss-Legendre nodes and weights on [0, 1] (weights sum to 1).
struct QuadratureRule {
  Vector nodes;
  Vector weights{};
};
QuadratureRule gauss_legendre_unit(int n);

struct QuadratureOptions {
  int initial_nodes = 8;
  int max_nodes_per_axis = 128;
  /// Node doubling stops once f* moves by less than this at every probe point.
  double tol = 1e-10;
  int probe_points = 32;
};

/// Ground truth for the Gaussian-smoothed law with generator scale*g and
/// variance sigma_eff_sq. At t = 0 that is (1, sigma^2); at time t of the OU
/// process it is (m_t, m_t^2 sigma^2 + sigma_t^2).
struct OracleContext {
  GeneratorSpec spec;
  NoiseConfig noise;
  std::optional<double> time;
  double sigma_eff_sq = 0.0;
  double gen_scale = 1.0;
  /// Latent nodes (N x d) and their product weights (sum to 1).
  Matrix nodes{};
  Vector weights{};
  Vector log_weights{};
  /// gen_scale * g(u_i) as columns (D x N).
  Matrix atoms{};
  int nodes_per_axis = 1;
  /// Largest change of f* over the probe points at the last node doubling.
  double achieved_tol = 0.0;
  double tol = 0.0;
  /// max_i ||atoms_i||, the max of ||gen_scale * g|| over the nodes.
  double max_atom_norm = 0.0;

  Index dim() const { return atoms.rows(); }
  Index node_count() const { return atoms.cols(); }
};

/// Throws std::invalid_argument for d > 3 and std::domain_error for t <= 0.
OracleContext make_context(const GeneratorSpec& spec, const NoiseConfig& noise,
                           std::optional<double> t = std::nullopt, QuadratureOptions options = {});

/// Same context with a fixed per-axis node count (no doubling search).
OracleContext make_context_fixed(const GeneratorSpec& spec, const NoiseConfig& noise,
                                 std::optional<double> t, int nodes_per_axis);

/// Posterior weights of the quadrature atoms given y, computed in log space.
Vector posterior_weights(const OracleContext& ctx, const Eigen::Ref<const Vector>& y);

/// log p(y) by log-sum-exp over the atoms.
double log_density(const OracleContext& ctx, const Eigen::Ref<const Vector>& y);

/// Posterior mean of g (not scaled): f*(y) at t = 0, f*(y, t) at time t.
Vector posterior_mean_generator(const OracleContext& ctx, const Eigen::Ref<const Vector>& y);

Vector true_score(const OracleContext& ctx, const Eigen::Ref<const Vector>& y);
Matrix true_score_jacobian(const OracleContext& ctx, const Eigen::Ref<const Vector>& y);

struct ScoreWithJacobian {
  Vector score;
  Matrix jacobian;
};
ScoreWithJacobian true_score_with_jacobian(const OracleContext& ctx,
                                           const Eigen::Ref<const Vector>& y);

struct DerivativeBound {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// k = 1: ||s*(y) + y/v|| <= max||G|| / v.
/// k = 2: ||grad s*(y) + I/v||_op <= 2 max||G||^2 / v^2,  with G = gen_scale * g, v = sigma_eff_sq.
DerivativeBound check_derivative_bound(const OracleContext& ctx, const Eigen::Ref<const Vector>& y,
                                       int k);

/// Draws from the marginal the context describes (p* at t = 0, p_t* otherwise).
Matrix sample_marginal(const OracleContext& ctx, Index n, std::uint64_t seed);

}  // namespace scorelab
