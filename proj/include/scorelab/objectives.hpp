#pragma once

#include "scorelab/core.hpp"
#include "scorelab/generators.hpp"
#include "scorelab/oracle.hpp"
#include "scorelab/score_field.hpp"

#include <cstdint>
#include <string>

namespace scorelab {

enum class Method { ism, dsm };
std::string to_string(Method m);
Method method_from_string(const std::string& name);

struct LossReport {
  double value = 0.0;
  Vector per_sample;
  double se = 0.0;
};

/// l(s, y) = 0.5 ||s(y)||^2 + div s(y).
double ism_loss(const ScoreField& s, const Eigen::Ref<const Vector>& y);

/// ||s(x_t) + z / sigma_t||^2 with x_t = m_t x0 + sigma_t z.
double dsm_loss_sample(const ScoreField& s, const Eigen::Ref<const Vector>& x0,
                       const Eigen::Ref<const Vector>& z, double t);

/// Same loss when x_t is already stored.
double dsm_loss_pair(const ScoreField& s, const Eigen::Ref<const Vector>& xt,
                     const Eigen::Ref<const Vector>& z, double t);

/// Sample mean of the per-sample loss. ISM wants a noisy (or clean) batch,
/// DSM an ou_pair batch and reads its stored X_t and Z.
LossReport empirical_risk(const ScoreField& s, const DataBatch& batch, Method method);

struct IdentityCheck {
  double gap = 0.0;
  double se = 0.0;
  bool holds = false;
};

/// E l(s, Y) - E l(s*, Y) - 0.5 E ||s - s*||^2 on common draws from p*.
/// Holds when |gap| <= 4 se.
IdentityCheck ism_identity_check(const ScoreField& s, const OracleContext& ctx, Index n_mc,
                                 std::uint64_t seed);

/// E l_t(s) - E l_t(s_t*) - E ||s(X_t) - s_t*(X_t)||^2 on common OU pairs.
/// `target_sigma_scale` multiplies sigma_t inside the model's regression
/// target (the oracle side keeps the right one); any value other than 1 is a
/// deliberately wrong loss.
IdentityCheck dsm_identity_check(const ScoreField& s, const OracleContext& ctx_t, Index n_mc,
                                 std::uint64_t seed, double target_sigma_scale = 1.0);

/// The true score as a ScoreField.
class OracleScore : public ScoreField {
 public:
  explicit OracleScore(const OracleContext& ctx) : ctx_(&ctx) {}
  Index dim() const override { return ctx_->dim(); }
  Vector value(const Eigen::Ref<const Vector>& x) const override { return true_score(*ctx_, x); }
  Matrix jacobian(const Eigen::Ref<const Vector>& x) const override {
    return true_score_jacobian(*ctx_, x);
  }

 private:
  const OracleContext* ctx_;
};

/// Reports div s + offset (and leaves value and Jacobian alone).
class DivergenceOffset : public ScoreField {
 public:
  DivergenceOffset(const ScoreField& base, double offset) : base_(&base), offset_(offset) {}
  Index dim() const override { return base_->dim(); }
  Vector value(const Eigen::Ref<const Vector>& x) const override { return base_->value(x); }
  Matrix jacobian(const Eigen::Ref<const Vector>& x) const override { return base_->jacobian(x); }
  double divergence(const Eigen::Ref<const Vector>& x) const override {
    return base_->divergence(x) + offset_;
  }

 private:
  const ScoreField* base_;
  double offset_;
};

/// Reports -div s.
class NegatedDivergence : public ScoreField {
 public:
  explicit NegatedDivergence(const ScoreField& base) : base_(&base) {}
  Index dim() const override { return base_->dim(); }
  Vector value(const Eigen::Ref<const Vector>& x) const override { return base_->value(x); }
  Matrix jacobian(const Eigen::Ref<const Vector>& x) const override { return base_->jacobian(x); }
  double divergence(const Eigen::Ref<const Vector>& x) const override { return -base_->divergence(x); }

 private:
  const ScoreField* base_;
};

}  // namespace scorelab
