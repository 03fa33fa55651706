#pragma once

#include "scorelab/core.hpp"
#include "scorelab/generators.hpp"
#include "scorelab/gelu_net.hpp"
#include "scorelab/objectives.hpp"
#include "scorelab/oracle.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace scorelab {

struct AdamConfig {
  double step = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// gelu: every weight trains. constant: f is a constant vector (all weights
/// held at zero, only the output bias and the scalar train).
enum class ModelFamily { gelu, constant };

struct TrainConfig {
  Method method = Method::ism;
  double t = 0.0;  // DSM time
  double sigma_min = 0.5;  // ISM upper bound a <= sigma_min^-2
  std::vector<int> widths;  // (W_0, ..., W_L), W_0 = W_L = D
  ModelFamily family = ModelFamily::gelu;
  AdamConfig adam;
  int epochs = 100;
  /// When set, overrides `epochs` with enough epochs for this many minibatch steps.
  std::optional<long> target_steps;
  Index batch_size = 0;  // 0 means min(n, 256)
  std::uint64_t seed = 0;
  double init_raw = 0.0;
  double penalty_weight = 0.0;
  ScoreBudget budget;
  int monitor_every = 10;  // 0 disables the per-epoch monitors
  int monitor_alpha = 2;
  Index monitor_probe = 32;
  bool grad_check = false;
  Index oracle_mc = 256;  // points for the per-epoch score error when an oracle is given

  void validate() const;
};

struct TrainHistory {
  std::vector<double> risk;        // full-batch empirical risk after each epoch
  std::vector<double> grad_norm;   // last minibatch gradient norm of the epoch
  std::vector<double> decoded;     // a (ISM) or sigma_tilde (DSM)
  std::vector<double> C0_hat;
  std::vector<double> C1_hat;
  std::vector<double> Calpha_hat;
  std::vector<double> score_error;  // filled only with an oracle
  double initial_risk = 0.0;
  double best_risk = 0.0;
  int best_epoch = -1;  // -1 is the initialization
  double grad_check_error = 0.0;
};

/// Zero biases, weights i.i.d. U[-r, r] with r = sqrt(6 / (fan_in + fan_out)).
NetworkParams init_params(const std::vector<int>& widths, std::uint64_t seed);

/// Gradient with the same layout as the model: the scalar and every layer.
struct ParamGradient {
  double raw = 0.0;
  std::vector<Layer> layers;

  Vector flatten() const;  // raw first, then NetworkParams::flatten order
  double norm() const { return flatten().norm(); }
};

/// Thrown when the loss or its gradient is non-finite at some sample.
class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(Index sample, const std::string& what)
      : std::runtime_error(what), sample_(sample) {}
  Index sample() const { return sample_; }

 private:
  Index sample_;
};

struct RiskGradient {
  double risk = 0.0;     // empirical risk (without penalty)
  double penalty = 0.0;  // soft monitor penalty
  ParamGradient grad;    // gradient of risk + penalty
};

/// Exact risk and parameter gradient on rows X (n x D). DSM reads X as X_t and
/// needs Z; ISM ignores Z. The divergence term is differentiated through the
/// forward tangents (forward-over-reverse).
RiskGradient risk_and_gradient(const ScoreModel& model, const Eigen::Ref<const Matrix>& X,
                               const Matrix* Z, Method method, double penalty_weight = 0.0,
                               const ScoreBudget& budget = {});

/// Gradient of empirical_risk(model, batch, method).
ParamGradient param_gradient(const ScoreModel& model, const DataBatch& batch, Method method);

/// Full-batch empirical risk by the batched forward pass.
double batch_risk(const ScoreModel& model, const Eigen::Ref<const Matrix>& X, const Matrix* Z,
                  Method method);

/// Central finite-difference check of param_gradient on every coordinate;
/// returns max |a - b| / max(|a|, |b|, 1e-4 ||g||_inf). A positive penalty
/// weight checks risk + penalty instead.
double gradient_check(const ScoreModel& model, const DataBatch& batch, Method method,
                      double step = 1e-5, double penalty_weight = 0.0, const ScoreBudget& budget = {});

struct TrainResult {
  ScoreModel model;
  TrainHistory history;
};

/// Risk exceeded 1e12 or became NaN; carries the history so far.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, TrainHistory history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const TrainHistory& history() const { return history_; }

 private:
  TrainHistory history_;
};

/// Builds the initial model for a config.
ScoreModel initial_model(const TrainConfig& config);

/// Minibatch Adam on the empirical risk; returns the snapshot with the lowest
/// full-batch risk seen (the initialization included).
TrainResult train_erm(const TrainConfig& config, const DataBatch& data,
                      const OracleContext* oracle = nullptr);

}  // namespace scorelab
