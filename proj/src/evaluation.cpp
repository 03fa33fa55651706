#include "scorelab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace scorelab {

std::pair<ErrorEstimate, ErrorEstimate> score_and_jacobian_error(const ScoreField& model,
                                                                 const OracleContext& ctx,
                                                                 Index n_mc, std::uint64_t seed) {
  require(n_mc >= 1, "error estimate needs n_mc >= 1");
  require_domain(model.dim() == ctx.dim(), "error estimate: model dimension does not match context");
  const Matrix Y = sample_marginal(ctx, n_mc, seed);
  Vector es(n_mc);
  Vector ej(n_mc);
  for (Index i = 0; i < n_mc; ++i) {
    const Vector y = Y.row(i).transpose();
    const auto truth = true_score_with_jacobian(ctx, y);
    es(i) = (model.value(y) - truth.score).squaredNorm();
    ej(i) = (model.jacobian(y) - truth.jacobian).squaredNorm();
  }
  const auto s = mean_and_se(es);
  const auto j = mean_and_se(ej);
  return {{s.mean, s.se, n_mc, seed}, {j.mean, j.se, n_mc, seed}};
}

ErrorEstimate score_error(const ScoreField& model, const OracleContext& ctx, Index n_mc,
                          std::uint64_t seed) {
  require(n_mc >= 1, "error estimate needs n_mc >= 1");
  require_domain(model.dim() == ctx.dim(), "error estimate: model dimension does not match context");
  const Matrix Y = sample_marginal(ctx, n_mc, seed);
  Vector es(n_mc);
  for (Index i = 0; i < n_mc; ++i) {
    const Vector y = Y.row(i).transpose();
    es(i) = (model.value(y) - true_score(ctx, y)).squaredNorm();
  }
  const auto s = mean_and_se(es);
  return {s.mean, s.se, n_mc, seed};
}

ErrorEstimate jacobian_error(const ScoreField& model, const OracleContext& ctx, Index n_mc,
                             std::uint64_t seed) {
  return score_and_jacobian_error(model, ctx, n_mc, seed).second;
}

RateFit fit_rate(const std::vector<std::pair<double, double>>& points, double beta, int d) {
  require(points.size() >= 3, "fit_rate needs at least 3 points");
  require(beta > 0.0 && d >= 0, "fit_rate: invalid smoothness metadata");
  RateFit fit;
  fit.points = points;
  fit.target_slope = -2.0 * beta / (2.0 * beta + d);
  const Index m = static_cast<Index>(points.size());
  Vector lx(m), ly(m);
  for (Index i = 0; i < m; ++i) {
    const auto [n, e] = points[static_cast<std::size_t>(i)];
    require_domain(n > 0.0, "fit_rate: sample sizes must be positive");
    require_domain(e > 0.0, "fit_rate: errors must be positive");
    lx(i) = std::log(n);
    ly(i) = std::log(e);
  }
  const double mx = lx.mean();
  const double my = ly.mean();
  const double sxx = (lx.array() - mx).square().sum();
  require_domain(sxx > 0.0, "fit_rate: sample sizes must not all be equal");
  const double sxy = ((lx.array() - mx) * (ly.array() - my)).sum();
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  const double syy = (ly.array() - my).square().sum();
  const double sse = (ly.array() - fit.intercept - fit.slope * lx.array()).square().sum();
  fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
  return fit;
}

RateFit fit_rate(const std::vector<std::pair<double, double>>& points, const GeneratorSpec& spec) {
  return fit_rate(points, spec.beta(), spec.latent_dim());
}

bool rate_band_holds(const RateFit& fit) {
  return fit.slope < 0.0 && fit.slope <= 0.5 * fit.target_slope && fit.r2 >= 0.8;
}

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, "spearman needs two equal-length samples");
  const auto ra = ranks(a);
  const auto rb = ranks(b);
  const Eigen::Map<const Vector> x(ra.data(), static_cast<Index>(ra.size()));
  const Eigen::Map<const Vector> y(rb.data(), static_cast<Index>(rb.size()));
  const Vector cx = (x.array() - x.mean()).matrix();
  const Vector cy = (y.array() - y.mean()).matrix();
  const double denom = cx.norm() * cy.norm();
  return denom > 0.0 ? cx.dot(cy) / denom : 0.0;
}

AssociationReport association_check(const std::vector<double>& score_errors,
                                    const std::vector<double>& jacobian_errors) {
  if (score_errors.size() < 10)
    throw std::domain_error("association_check needs at least 10 records");
  require(score_errors.size() == jacobian_errors.size(), "association_check: length mismatch");
  AssociationReport r;
  r.spearman = spearman(score_errors, jacobian_errors);
  r.holds = r.spearman >= 0.7;
  return r;
}

double quantile(std::vector<double> values, double q) {
  require(!values.empty(), "quantile of an empty sample");
  require(q >= 0.0 && q <= 1.0, "quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

}  // namespace scorelab
