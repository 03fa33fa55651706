#pragma once

#include "scorelab/core.hpp"
#include "scorelab/generators.hpp"
#include "scorelab/oracle.hpp"
#include "scorelab/score_field.hpp"

#include <cstdint>
#include <utility>
#include <vector>

namespace scorelab {

struct ErrorEstimate {
  double mean = 0.0;
  double se = 0.0;
  Index n_mc = 0;
  std::uint64_t seed = 0;
};

/// ||s - s*||^2 averaged over n_mc draws from the context's marginal.
ErrorEstimate score_error(const ScoreField& model, const OracleContext& ctx, Index n_mc,
                          std::uint64_t seed);

/// || grad s - grad s* ||_F^2 on the same kind of draws.
ErrorEstimate jacobian_error(const ScoreField& model, const OracleContext& ctx, Index n_mc,
                             std::uint64_t seed);

/// Both errors from one set of draws (identical to calling the two above with
/// the same seed).
std::pair<ErrorEstimate, ErrorEstimate> score_and_jacobian_error(const ScoreField& model,
                                                                 const OracleContext& ctx,
                                                                 Index n_mc, std::uint64_t seed);

struct RateFit {
  std::vector<std::pair<double, double>> points;  // (n, error)
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  double target_slope = 0.0;  // -2 beta / (2 beta + d)
};

/// OLS of log error on log n. Needs at least 3 points and positive errors.
RateFit fit_rate(const std::vector<std::pair<double, double>>& points, double beta, int d);
RateFit fit_rate(const std::vector<std::pair<double, double>>& points, const GeneratorSpec& spec);

/// Slope band for the rate check: slope <= 0.5 * target and r^2 >= 0.8.
bool rate_band_holds(const RateFit& fit);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

struct AssociationReport {
  double spearman = 0.0;
  bool holds = false;
};

/// Rank association between score and Jacobian errors across runs; needs at
/// least 10 pairs, holds when the correlation is >= 0.7.
AssociationReport association_check(const std::vector<double>& score_errors,
                                    const std::vector<double>& jacobian_errors);

/// Linear-interpolation quantile (q in [0, 1]) of an unsorted sample.
double quantile(std::vector<double> values, double q);

}  // namespace scorelab
