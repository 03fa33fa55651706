#include "scorelab/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace scorelab {

std::string to_string(Method m) { return m == Method::ism ? "ism" : "dsm"; }

Method method_from_string(const std::string& name) {
  if (name == "ism") return Method::ism;
  if (name == "dsm") return Method::dsm;
  throw std::invalid_argument("unknown method '" + name + "' (expected ism or dsm)");
}

double ism_loss(const ScoreField& s, const Eigen::Ref<const Vector>& y) {
  return 0.5 * s.value(y).squaredNorm() + s.divergence(y);
}

double dsm_loss_sample(const ScoreField& s, const Eigen::Ref<const Vector>& x0,
                       const Eigen::Ref<const Vector>& z, double t) {
  if (!(t > 0.0)) throw std::domain_error("dsm loss needs t > 0");
  const auto [m, var] = ou_coeffs(t);
  const double sd = std::sqrt(var);
  const Vector xt = m * x0 + sd * z;
  return (s.value(xt) + z / sd).squaredNorm();
}

double dsm_loss_pair(const ScoreField& s, const Eigen::Ref<const Vector>& xt,
                     const Eigen::Ref<const Vector>& z, double t) {
  if (!(t > 0.0)) throw std::domain_error("dsm loss needs t > 0");
  const double sd = std::sqrt(ou_coeffs(t).second);
  return (s.value(xt) + z / sd).squaredNorm();
}

LossReport empirical_risk(const ScoreField& s, const DataBatch& batch, Method method) {
  require_domain(batch.dim() == s.dim(), "empirical_risk: batch dimension does not match model");
  require(batch.size() > 0, "empirical_risk: empty batch");
  LossReport rep;
  rep.per_sample.resize(batch.size());
  if (method == Method::ism) {
    require_domain(batch.provenance != Provenance::ou_pair, "ISM risk needs a noisy batch, got OU pairs");
    for (Index i = 0; i < batch.size(); ++i) rep.per_sample(i) = ism_loss(s, batch.rows.row(i).transpose());
  } else {
    require_domain(batch.provenance == Provenance::ou_pair && batch.z.has_value(),
                   "DSM risk needs an OU-pair batch");
    for (Index i = 0; i < batch.size(); ++i)
      rep.per_sample(i) =
          dsm_loss_pair(s, batch.rows.row(i).transpose(), batch.z->row(i).transpose(), batch.time);
  }
  const auto ms = mean_and_se(rep.per_sample);
  rep.value = ms.mean;
  rep.se = ms.se;
  return rep;
}

namespace {

IdentityCheck summarize(const Vector& d) {
  const auto ms = mean_and_se(d);
  IdentityCheck c;
  c.gap = ms.mean;
  c.se = ms.se;
  c.holds = std::abs(c.gap) <= 4.0 * c.se;
  return c;
}

}  // namespace

IdentityCheck ism_identity_check(const ScoreField& s, const OracleContext& ctx, Index n_mc,
                                 std::uint64_t seed) {
  require_domain(!ctx.time.has_value(), "ISM identity check needs the t = 0 context");
  require(n_mc >= 2, "identity check needs n_mc >= 2");
  require_domain(s.dim() == ctx.dim(), "identity check: model dimension does not match context");
  const Matrix Y = sample_marginal(ctx, n_mc, seed);
  Vector d(n_mc);
  for (Index i = 0; i < n_mc; ++i) {
    const Vector y = Y.row(i).transpose();
    const auto truth = true_score_with_jacobian(ctx, y);
    const Vector sv = s.value(y);
    const double l_model = 0.5 * sv.squaredNorm() + s.divergence(y);
    const double l_true = 0.5 * truth.score.squaredNorm() + truth.jacobian.trace();
    d(i) = l_model - l_true - 0.5 * (sv - truth.score).squaredNorm();
  }
  return summarize(d);
}

IdentityCheck dsm_identity_check(const ScoreField& s, const OracleContext& ctx_t, Index n_mc,
                                 std::uint64_t seed, double target_sigma_scale) {
  require_domain(ctx_t.time.has_value(), "DSM identity check needs a time-t context");
  require(n_mc >= 2, "identity check needs n_mc >= 2");
  require_domain(s.dim() == ctx_t.dim(), "identity check: model dimension does not match context");
  const double t = *ctx_t.time;
  const DataBatch pairs = sample_ou_pair(ctx_t.spec, ctx_t.noise, t, n_mc, seed);
  const double sd = std::sqrt(ou_coeffs(t).second);
  Vector d(n_mc);
  for (Index i = 0; i < n_mc; ++i) {
    const Vector xt = pairs.rows.row(i).transpose();
    const Vector target = pairs.z->row(i).transpose() / sd;
    const Vector sv = s.value(xt);
    const Vector st = true_score(ctx_t, xt);
    d(i) = (sv + target / target_sigma_scale).squaredNorm() - (st + target).squaredNorm() -
           (sv - st).squaredNorm();
  }
  return summarize(d);
}

}  // namespace scorelab
