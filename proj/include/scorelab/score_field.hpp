#pragma once

#include "scorelab/core.hpp"

namespace scorelab {

/// A vector field R^D -> R^D with first derivatives: a candidate score.
class ScoreField {
 public:
  virtual ~ScoreField() = default;
  virtual Index dim() const = 0;
  virtual Vector value(const Eigen::Ref<const Vector>& x) const = 0;
  virtual Matrix jacobian(const Eigen::Ref<const Vector>& x) const = 0;
  virtual double divergence(const Eigen::Ref<const Vector>& x) const { return jacobian(x).trace(); }
};

}  // namespace scorelab
