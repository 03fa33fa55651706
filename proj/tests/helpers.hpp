#pragma once

#include "scorelab/core.hpp"
#include "scorelab/generators.hpp"
#include "scorelab/rng.hpp"
#include "scorelab/score_field.hpp"

#include <numbers>

namespace scorelab::testing {

/// s(x) = M x + v.
class AffineField : public ScoreField {
 public:
  AffineField(Matrix M, Vector v) : M_(std::move(M)), v_(std::move(v)) {}
  Index dim() const override { return v_.size(); }
  Vector value(const Eigen::Ref<const Vector>& x) const override { return M_ * x + v_; }
  Matrix jacobian(const Eigen::Ref<const Vector>&) const override { return M_; }

 private:
  Matrix M_;
  Vector v_;
};

/// base(x) + M x + v.
class ShiftedField : public ScoreField {
 public:
  ShiftedField(const ScoreField& base, Matrix M, Vector v) : base_(&base), M_(std::move(M)), v_(std::move(v)) {}
  Index dim() const override { return base_->dim(); }
  Vector value(const Eigen::Ref<const Vector>& x) const override { return base_->value(x) + M_ * x + v_; }
  Matrix jacobian(const Eigen::Ref<const Vector>& x) const override { return base_->jacobian(x) + M_; }

 private:
  const ScoreField* base_;
  Matrix M_;
  Vector v_;
};

inline Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v(i++) = x;
  return v;
}

inline GeneratorSpec circle() {
  Matrix freq(2, 1);
  freq << 1.0, 1.0;
  return GeneratorSpec::trigonometric(vec({0.5, 0.5}), freq, vec({0.0, std::numbers::pi / 2}));
}

/// The D = 4 trigonometric generator of the rate experiment.
inline GeneratorSpec trig4() {
  Matrix freq(4, 1);
  freq << 1, 1, 2, 2;
  return GeneratorSpec::trigonometric(Vector::Constant(4, 0.5), freq,
                                      vec({0.0, std::numbers::pi / 2, 0.0, std::numbers::pi / 2}));
}

}  // namespace scorelab::testing
