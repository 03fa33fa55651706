#pragma once

#include "scorelab/core.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace scorelab {

enum class GeneratorKind { constant, affine, trigonometric, polynomial };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(const std::string& name);

/// One monomial c * u^power contributing to output component `output`.
struct PolynomialTerm {
  int output = 0;
  std::vector<int> power;
  double coef = 0.0;
};

/// A bounded map g: [0,1]^d -> R^D from one of four closed-form families.
///
///   constant       g(u) = offset
///   affine         g(u) = offset + matrix * u
///   trigonometric  g_j(u) = amplitude_j * sin(2 pi <frequency_j, u> + phase_j)
///   polynomial     g_j(u) = sum of the terms with output j
///
/// Construction rescales the output so that sup ||g|| <= 1 (using the analytic
/// bound of the family) and then audits the bound on a dense grid.
class GeneratorSpec {
 public:
  static GeneratorSpec constant(Vector value, double beta = 1.0);
  static GeneratorSpec affine(Vector offset, Matrix matrix, double beta = 1.0);
  static GeneratorSpec trigonometric(Vector amplitude, Matrix frequency, Vector phase,
                                     double beta = 2.0);
  static GeneratorSpec polynomial(int latent_dim, int ambient_dim, std::vector<PolynomialTerm> terms,
                                  double beta = 2.0);

  GeneratorKind kind() const { return kind_; }
  int latent_dim() const { return latent_dim_; }
  int ambient_dim() const { return ambient_dim_; }
  double beta() const { return beta_; }
  /// Analytic upper bound on sup_u ||g(u)|| after normalization.
  double sup_norm_bound() const { return sup_bound_; }
  /// Factor applied to the user coefficients at construction (1 if none).
  double rescale_factor() const { return rescale_; }

  /// g(u); throws std::domain_error if u is not in the unit cube.
  Vector operator()(const Eigen::Ref<const Vector>& u) const;
  /// g(u) without the domain check.
  Vector evaluate(const Eigen::Ref<const Vector>& u) const;

  nlohmann::json to_json() const;
  static GeneratorSpec from_json(const nlohmann::json& j);

  const Vector& offset() const { return offset_; }
  const Matrix& matrix() const { return matrix_; }
  const Vector& amplitude() const { return amplitude_; }
  const Vector& phase() const { return phase_; }
  const std::vector<PolynomialTerm>& terms() const { return terms_; }

 private:
  GeneratorSpec() = default;
  void finalize();
  double analytic_bound() const;
  void scale_outputs(double factor);

  GeneratorKind kind_ = GeneratorKind::constant;
  int latent_dim_ = 0;
  int ambient_dim_ = 0;
  double beta_ = 1.0;
  double sup_bound_ = 0.0;
  double rescale_ = 1.0;
  Vector offset_;     // constant, affine
  Matrix matrix_;     // affine: D x d; trigonometric: frequencies D x d
  Vector amplitude_;  // trigonometric
  Vector phase_;      // trigonometric
  std::vector<PolynomialTerm> terms_;
};

/// Noise level sigma of the data law and the known lower bound sigma_min.
struct NoiseConfig {
  double sigma = 0.5;
  double sigma_min = 0.5;

  /// Validates 0 < sigma_min <= sigma < 1.
  static NoiseConfig make(double sigma, double sigma_min);
};

enum class Provenance { clean, noisy, ou_pair };

/// An immutable sample. For ou_pair batches `rows` holds X_t, `x0` the clean-time
/// draws and `z` the standard normal with X_t = m_t X_0 + sigma_t Z.
struct DataBatch {
  Matrix rows;
  std::uint64_t seed = 0;
  Provenance provenance = Provenance::noisy;
  double time = 0.0;
  std::optional<Matrix> x0;
  std::optional<Matrix> z;

  Index size() const { return rows.rows(); }
  Index dim() const { return rows.cols(); }
};

/// Draws n rows of g(U) + sigma * xi. Row i uses its own counter stream, so a
/// batch of n is a prefix of any larger batch with the same seed.
DataBatch sample_noisy(const GeneratorSpec& spec, double sigma, Index n, std::uint64_t seed);
DataBatch sample_noisy(const GeneratorSpec& spec, const NoiseConfig& noise, Index n,
                       std::uint64_t seed);

/// Ornstein-Uhlenbeck transition coefficients (m_t, sigma_t^2) = (e^{-t}, 1 - e^{-2t}).
std::pair<double, double> ou_coeffs(double t);

/// (x_t - m_t x_0) / sigma_t, the form used to store Z.
Vector ou_residual(const Eigen::Ref<const Vector>& xt, const Eigen::Ref<const Vector>& x0,
                   double t);

/// X_0 as in sample_noisy (same seed gives the same X_0), then X_t = m_t X_0 + sigma_t Z.
/// The stored Z is ou_residual(X_t, X_0, t), which equals the drawn normal up to rounding.
DataBatch sample_ou_pair(const GeneratorSpec& spec, const NoiseConfig& noise, double t, Index n,
                         std::uint64_t seed);

/// Concatenates batches of the same provenance (rows appended in order).
DataBatch concatenate(const DataBatch& first, const DataBatch& second);

/// CSV with header x0..x{D-1}, one row per sample, 17 significant digits.
std::string batch_to_csv(const Matrix& rows);
Matrix matrix_from_csv(const std::string& text);

}  // namespace scorelab
