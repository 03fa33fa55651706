#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace scorelab {

using Index = Eigen::Index;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

using Vector = VectorX<double>;
using Matrix = MatrixX<double>;

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

inline void require_domain(bool condition, const std::string& message) {
  if (!condition) throw std::domain_error(message);
}

/// Pairwise summation, so a reduction does not depend on how it is chunked.
inline double pairwise_sum(const double* x, Index n) {
  if (n <= 16) {
    double s = 0.0;
    for (Index i = 0; i < n; ++i) s += x[i];
    return s;
  }
  const Index h = n / 2;
  return pairwise_sum(x, h) + pairwise_sum(x + h, n - h);
}
inline double pairwise_sum(const Vector& v) { return pairwise_sum(v.data(), v.size()); }
inline double pairwise_mean(const Vector& v) { return pairwise_sum(v) / static_cast<double>(v.size()); }

/// Mean and standard error (sd / sqrt(n)) of a sample.
struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};
inline MeanSe mean_and_se(const Vector& v) {
  MeanSe r;
  const Index n = v.size();
  if (n == 0) return r;
  r.mean = pairwise_mean(v);
  if (n > 1) {
    const Vector c = (v.array() - r.mean).square().matrix();
    r.se = std::sqrt(pairwise_sum(c) / static_cast<double>(n - 1) / static_cast<double>(n));
  }
  return r;
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

}  // namespace scorelab
