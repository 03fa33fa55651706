#pragma once

#include "scorelab/core.hpp"
#include "scorelab/oracle.hpp"

#include <cstdint>
#include <map>
#include <vector>

namespace scorelab {

/// Probabilist's Hermite polynomial He_k(x) by the three-term recurrence.
double hermite_eval(int k, double x);

/// He_0(x) .. He_k(x).
Vector hermite_table(int k, double x);

using MultiIndex = std::vector<int>;

/// Largest per-axis degree for which k!/(k-p)! is computed exactly in 64 bits.
inline constexpr int kMaxHermiteDegree = 20;

/// k! for a multi-index, i.e. the product of the per-axis factorials.
double multi_factorial(const MultiIndex& k);

/// All multi-indices of length `dim` with |k| == order, in descending
/// lexicographic order ((order, 0, ..) first).
std::vector<MultiIndex> multi_indices_of_order(int dim, int order);

/// Finite multivariate Hermite expansion f(x) = sum_k a_k He_k(x) with
/// a_k in R^{out_dim} and He_k(x) = prod_i He_{k_i}(x_i).
class HermiteSeries {
 public:
  HermiteSeries(int dim, int out_dim) : dim_(dim), out_dim_(out_dim) {}

  int dim() const { return dim_; }
  int out_dim() const { return out_dim_; }
  int max_degree() const;
  const std::map<MultiIndex, Vector>& terms() const { return terms_; }

  /// Adds `coef` to the coefficient of He_k.
  void add_term(const MultiIndex& k, const Vector& coef);

  Vector operator()(const Eigen::Ref<const Vector>& x) const;

  /// Evaluation from precomputed per-axis tables (tables[i](j) = He_j(x_i)).
  Vector evaluate_with_tables(const std::vector<Vector>& tables) const;

 private:
  int dim_;
  int out_dim_;
  std::map<MultiIndex, Vector> terms_;
};

/// sum_k ||a_k||^2 k!
double series_l2_norm_sq(const HermiteSeries& s);

/// d^p f via d^p He_k = k!/(k-p)! He_{k-p}. Throws std::overflow_error past
/// degree 20 or when the ratio leaves 64-bit range.
HermiteSeries series_derivative(const HermiteSeries& s, const MultiIndex& p);

/// sum_i d_i f_i as a scalar series; needs out_dim == dim.
HermiteSeries series_divergence(const HermiteSeries& s);

/// |f|^2_{W^{l,2}(phi)} = sum_{|p| = l} ||d^p f||^2.
double series_sobolev_seminorm_sq(const HermiteSeries& s, int order);

/// || ||grad f||_F ||^2_{L^2(phi)}; needs out_dim == dim.
double series_jacobian_frob_sq(const HermiteSeries& s);

struct GaussianGnReport {
  double lhs_div = 0.0;
  double rhs_div = 0.0;
  double lhs_jac = 0.0;
  double rhs_jac = 0.0;
  bool holds = false;
};

/// Both interpolation inequalities under the standard Gaussian weight, exactly
/// from the coefficients:
///   ||div f||^2        <= a D (||f||^2 + |f|^2_a)^{1/a} ||f||^{2(a-1)/a}
///   || ||grad f||_F ||^2 <= a D^{1-1/a} (D ||f||^2 + |f|^2_a)^{1/a} ||f||^{2(a-1)/a}
GaussianGnReport verify_gn_gaussian(const HermiteSeries& s, int alpha);

/// h(y) = s((y - center) / scale), the argument map for weighted checks.
struct SeriesInputMap {
  Vector center;
  double scale = 1.0;
};

struct WeightedGnReport {
  double lhs = 0.0;       // ||div h||^2_{L^2(p*)}
  double rhs = 0.0;
  double mc_se = 0.0;     // standard error of rhs - lhs (delta method)
  bool holds = false;     // lhs <= rhs + 3 mc_se
  double lhs_jac = 0.0;   // || ||grad h||_F ||^2_{L^2(p*)}
  double rhs_jac = 0.0;
  double mc_se_jac = 0.0;
  double norm_sq = 0.0;   // ||h||^2_{L^2(p*)}
  double seminorm_sq = 0.0;  // |h|^2_{W^{alpha,2}(p*)}
};

/// Monte Carlo version of the weighted inequality with weight p*:
///   ||div h||^2 <= (a D / sigma^2) (||h||^2 + sigma^{2a} |h|^2_a)^{1/a} ||h||^{2 - 2/a}
/// and its Jacobian analogue. `samples` are draws from p* (rows).
WeightedGnReport verify_gn_weighted(const OracleContext& ctx, const HermiteSeries& s, int alpha,
                                    const Matrix& samples, const SeriesInputMap& map);
WeightedGnReport verify_gn_weighted(const OracleContext& ctx, const HermiteSeries& s, int alpha,
                                    Index n_mc, std::uint64_t seed);

/// Coefficients i.i.d. N(0, 1) * decay^{|k|} for every |k| <= max_degree.
HermiteSeries random_series(int dim, int max_degree, double decay, std::uint64_t seed,
                            int out_dim = -1);

}  // namespace scorelab
