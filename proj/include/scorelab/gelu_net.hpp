#pragma once

#include "scorelab/core.hpp"
#include "scorelab/dual.hpp"
#include "scorelab/score_field.hpp"

#include <json.hpp>

#include <cstdint>
#include <utility>
#include <vector>

namespace scorelab {

double gelu(double x);
/// GELU'(x) = x phi(x) + Phi(x).
double gelu_prime(double x);
/// GELU''(x) = phi(x) (2 - x^2).
double gelu_second(double x);
/// GELU^{(k)}(x) = x phi^{(k-1)}(x) + k phi^{(k-2)}(x) for k >= 2.
double gelu_derivative(int order, double x);

template <typename T>
Dual<T> gelu_derivative(int order, const Dual<T>& x) {
  return {gelu_derivative(order, x.v), gelu_derivative(order + 1, x.v) * x.d};
}

template <typename S>
S gelu_generic(const S& x) {
  return gelu_derivative(0, x);
}

struct Layer {
  Matrix weight;
  Vector bias;
};

/// Weights of f(x) = -b_L + A_L GELU_{b_{L-1}}( ... A_2 GELU_{b_1}(A_1 x)),
/// where GELU_b(z) = GELU(z - b) elementwise.
class NetworkParams {
 public:
  NetworkParams() = default;
  explicit NetworkParams(std::vector<Layer> layers);

  /// All-zero network with the given widths (W_0, ..., W_L).
  static NetworkParams zeros(const std::vector<int>& widths);

  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  int depth() const { return static_cast<int>(layers_.size()); }
  std::vector<int> widths() const;
  int input_dim() const { return static_cast<int>(layers_.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers_.back().weight.rows()); }
  int max_width() const;

  /// B_effective: largest entry magnitude over all weights and biases.
  double max_abs() const;
  /// S_effective: number of entries with magnitude above the threshold.
  Index nonzero_count(double threshold = 1e-8) const;
  Index parameter_count() const;

  /// Layer-by-layer, weight (row-major) then bias.
  Vector flatten() const;
  void assign(const Eigen::Ref<const Vector>& flat);

  nlohmann::json to_json() const;
  static NetworkParams from_json(const nlohmann::json& j);

 private:
  std::vector<Layer> layers_;
};

template <typename S>
VectorX<S> net_forward(const NetworkParams& params, const VectorX<S>& x) {
  require_domain(x.size() == params.input_dim(), "net_forward: input has wrong dimension");
  const auto& layers = params.layers();
  VectorX<S> h = x;
  for (std::size_t j = 0; j + 1 < layers.size(); ++j) {
    const VectorX<S> u = layers[j].weight.template cast<S>() * h - layers[j].bias.template cast<S>();
    h = u.unaryExpr([](const S& v) { return gelu_generic(v); });
  }
  return layers.back().weight.template cast<S>() * h - layers.back().bias.template cast<S>();
}

Vector net_forward(const NetworkParams& params, const Eigen::Ref<const Vector>& x);

struct ValueJacobian {
  Vector value;
  Matrix jacobian;
};
/// Value and Jacobian from D simultaneous forward tangent passes.
ValueJacobian net_value_jacobian(const NetworkParams& params, const Eigen::Ref<const Vector>& x);
Matrix net_jacobian(const NetworkParams& params, const Eigen::Ref<const Vector>& x);
double net_divergence(const NetworkParams& params, const Eigen::Ref<const Vector>& x);

/// d^k f over all output components for the multi-index given as a list of
/// coordinates (e.g. {0, 0, 2} is d^3 / dx_0^2 dx_2). Nested forward mode, up to order 3.
Vector net_mixed_partial(const NetworkParams& params, const Eigen::Ref<const Vector>& x,
                         const std::vector<int>& coordinates);

/// Batched forward pass over columns of X (D x B), optionally with tangents in
/// every input direction and second-order tangents for every pair p <= q,
/// kept for the reverse sweep.
struct NetworkTape {
  std::vector<Matrix> inputs;   // layer inputs H_j (W_j x B), j = 0..L-1
  std::vector<Matrix> preact;   // U_j = A_j H_j - b_j for hidden layers
  std::vector<Matrix> gelu1;    // GELU'(U_j)
  std::vector<std::vector<Matrix>> tangent_in;    // [layer][p]: dH_j / dx_p
  std::vector<std::vector<Matrix>> tangent_pre;   // [hidden layer][p]: A_j dH_j / dx_p
  std::vector<std::pair<int, int>> pairs;         // (p, q), p <= q
  std::vector<std::vector<Matrix>> tangent2_in;   // [layer][k]: d^2 H_j / dx_p dx_q
  std::vector<std::vector<Matrix>> tangent2_pre;  // [hidden layer][k]
  Matrix output;                        // F (D_out x B)
  std::vector<Matrix> output_tangent;   // dF / dx_p
  std::vector<Matrix> output_tangent2;  // d^2 F / dx_p dx_q, same order as pairs
  bool with_tangents = false;
  bool with_second = false;
};

NetworkTape forward_tape(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                         bool with_tangents, bool with_second = false);

/// Reverse sweep: accumulates parameter gradients given adjoints of F, of the
/// output tangents and of the second-order output tangents (pass empty vectors
/// for the orders that carry no adjoint).
void backward_tape(const NetworkParams& params, const NetworkTape& tape,
                   const Eigen::Ref<const Matrix>& output_adjoint,
                   const std::vector<Matrix>& tangent_adjoint, std::vector<Layer>& grads,
                   const std::vector<Matrix>& tangent2_adjoint = {});

enum class ScoreVariant { ism, dsm };

/// Structured score s(x) = -lambda x + mu f(x) with f a GELU network.
///   ISM: lambda = mu = a, a in (1, sigma_min^{-2}] decoded from a_raw.
///   DSM: lambda = 1 / den, mu = m_t / den, den = m_t^2 sigma_tilde^2 + sigma_t^2,
///        sigma_tilde in [0, 1) decoded from sigma_tilde_raw.
class ScoreModel : public ScoreField {
 public:
  static ScoreModel ism(NetworkParams net, double sigma_min, double a_raw = 0.0);
  static ScoreModel dsm(NetworkParams net, double t, double sigma_tilde_raw = 0.0);

  ScoreVariant variant() const { return variant_; }
  const NetworkParams& net() const { return net_; }
  NetworkParams& net() { return net_; }
  double raw() const { return raw_; }
  void set_raw(double raw) { raw_ = raw; }
  double sigma_min() const { return sigma_min_; }
  double time() const { return time_; }

  /// Decoded a (ISM only).
  double a() const;
  /// Decoded sigma_tilde (DSM only).
  double sigma_tilde() const;
  /// The decoded constrained scalar (a or sigma_tilde).
  double decoded() const { return variant_ == ScoreVariant::ism ? a() : sigma_tilde(); }

  double linear_coef() const;
  double net_coef() const;
  /// d lambda / d raw and d mu / d raw.
  std::pair<double, double> coef_derivatives() const;

  Index dim() const override { return net_.input_dim(); }
  Vector value(const Eigen::Ref<const Vector>& x) const override;
  Matrix jacobian(const Eigen::Ref<const Vector>& x) const override;
  double divergence(const Eigen::Ref<const Vector>& x) const override;

  nlohmann::json to_json() const;
  static ScoreModel from_json(const nlohmann::json& j);

  /// Inverse of the squashing maps.
  static double raw_for_a(double a, double sigma_min);
  static double raw_for_sigma_tilde(double sigma_tilde);

 private:
  ScoreModel() = default;

  ScoreVariant variant_ = ScoreVariant::ism;
  NetworkParams net_;
  double raw_ = 0.0;
  double sigma_min_ = 0.5;
  double time_ = 0.0;
};

/// Class budgets (C_0, C_1, C_alpha) before the sigma scaling.
struct ScoreBudget {
  double C0 = 1.0;
  double C1 = 1.0;
  double Calpha = 1.0;
};

struct MonitorReport {
  double C0_hat = 0.0;
  double C1_hat = 0.0;
  double Calpha_hat = 0.0;
  int violations = 0;
};

/// Probe-cloud estimates of max_l |f_l|_{W^{0,inf}}, max_l |f_l|_{W^{1,inf}} and
/// max_l |f_l|_{W^{alpha,2}(p)} (probe rows drawn from p), checked against
/// (C0, C1 sigma_min^{-2}, C_alpha sigma_min^{-2 alpha}) for ISM and
/// (C0, -, C_alpha sigma_t^{-2 alpha}) for DSM.
MonitorReport sobolev_monitor(const ScoreModel& model, const Matrix& probe, int alpha,
                              const ScoreBudget& budget = {});

struct StabilityAudit {
  double max_gap = 0.0;
  double bound = 0.0;
  double max_div_gap = 0.0;
  double div_bound = 0.0;
  bool holds = false;
};

/// Perturbs every weight by U[-eps, eps] and compares values and divergences on
/// a grid of [-R, R]^D against the network-proximity bounds
///   sqrt(D) 4^L (B v 1)^L (|W|_inf + 1)^L (R v 1) eps
///   D 16^L (|W|_inf + 1)^{2L-1} (B v 1)^{2L-1} (R v 1) eps.
StabilityAudit perturbation_stability_audit(const NetworkParams& params, double epsilon, double R,
                                            int trials, std::uint64_t seed);

}  // namespace scorelab
