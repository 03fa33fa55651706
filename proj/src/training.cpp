#include "scorelab/training.hpp"

#include "scorelab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace scorelab {

void TrainConfig::validate() const {
  require(widths.size() >= 2, "train: architecture needs at least two widths");
  for (int w : widths) require(w >= 1, "train: architecture widths must be positive");
  require(widths.front() == widths.back(), "train: first and last width must both equal D");
  require(adam.step > 0.0, "train: step size must be positive");
  require(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0,
          "train: moment decays must lie in [0, 1)");
  require(adam.eps > 0.0, "train: adam epsilon must be positive");
  require(epochs >= 0, "train: epochs must be nonnegative");
  require(!target_steps || *target_steps >= 0, "train: steps must be nonnegative");
  require(batch_size >= 0, "train: batch size must be nonnegative");
  require(penalty_weight >= 0.0, "train: penalty weight must be nonnegative");
  require(monitor_every >= 0, "train: monitor_every must be nonnegative");
  require(monitor_alpha >= 1 && monitor_alpha <= 3, "train: monitor alpha must be 1, 2 or 3");
  if (method == Method::dsm) {
    if (!(t > 0.0)) throw std::domain_error("train: DSM needs t > 0");
  } else {
    require(sigma_min > 0.0 && sigma_min < 1.0, "train: sigma_min must lie in (0, 1)");
  }
}

NetworkParams init_params(const std::vector<int>& widths, std::uint64_t seed) {
  NetworkParams p = NetworkParams::zeros(widths);
  CounterRng root(seed);
  std::uint64_t layer_id = 0;
  for (auto& l : p.layers()) {
    CounterRng rng = root.split(layer_id++);
    const double r = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
    for (Index i = 0; i < l.weight.rows(); ++i)
      for (Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = rng.uniform(-r, r);
  }
  return p;
}

Vector ParamGradient::flatten() const {
  Index size = 1;
  for (const auto& l : layers) size += l.weight.size() + l.bias.size();
  Vector out(size);
  out(0) = raw;
  Index k = 1;
  for (const auto& l : layers) {
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) out(k++) = l.weight(r, c);
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

namespace {

double relu(double x) { return x > 0.0 ? x : 0.0; }
double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

void check_columns(const Matrix& M, const char* what) {
  for (Index b = 0; b < M.cols(); ++b)
    if (!M.col(b).allFinite())
      throw NonFiniteGradient(b, std::string("non-finite ") + what + " at sample " + std::to_string(b));
}

struct ForwardLoss {
  NetworkTape tape;
  Matrix S;        // score values (D x B)
  Matrix R;        // DSM residual s + z / sigma_t
  Vector divf;     // ISM: div f per sample
  Vector loss;     // per-sample loss
};

ForwardLoss forward_loss(const ScoreModel& model, const Eigen::Ref<const Matrix>& X,
                         const Matrix* Z, Method method, bool need_tangents, bool need_second) {
  require_domain(X.cols() == model.dim(), "risk: data dimension does not match model");
  if (method == Method::dsm) {
    require_domain(Z != nullptr && Z->rows() == X.rows() && Z->cols() == X.cols(),
                   "DSM risk needs a Z matrix matching the data");
    require_domain(model.variant() == ScoreVariant::dsm, "DSM risk needs a DSM model");
  } else {
    require_domain(model.variant() == ScoreVariant::ism, "ISM risk needs an ISM model");
  }
  const Index B = X.rows();
  const Index D = X.cols();
  const double lambda = model.linear_coef();
  const double mu = model.net_coef();
  const Matrix Xc = X.transpose();

  ForwardLoss out;
  out.tape = forward_tape(model.net(), Xc, method == Method::ism || need_tangents || need_second,
                          need_second);
  out.S = mu * out.tape.output - lambda * Xc;
  out.loss.resize(B);
  if (method == Method::ism) {
    out.divf = Vector::Zero(B);
    for (Index i = 0; i < D; ++i) out.divf += out.tape.output_tangent[static_cast<std::size_t>(i)].row(i).transpose();
    const Vector div_s = (mu * out.divf.array() - lambda * static_cast<double>(D)).matrix();
    out.loss = (0.5 * out.S.colwise().squaredNorm().transpose() + div_s);
  } else {
    const double sd = std::sqrt(ou_coeffs(model.time()).second);
    out.R = out.S + Z->transpose() / sd;
    out.loss = out.R.colwise().squaredNorm().transpose();
  }
  for (Index b = 0; b < B; ++b)
    if (!std::isfinite(out.loss(b)))
      throw NonFiniteGradient(b, "non-finite loss at sample " + std::to_string(b));
  return out;
}

}  // namespace

double batch_risk(const ScoreModel& model, const Eigen::Ref<const Matrix>& X, const Matrix* Z,
                  Method method) {
  require(X.rows() > 0, "risk: empty data");
  constexpr Index kChunk = 2048;
  Vector losses(X.rows());
  for (Index start = 0; start < X.rows(); start += kChunk) {
    const Index len = std::min(kChunk, X.rows() - start);
    Matrix zc;
    if (Z) zc = Z->middleRows(start, len);
    const auto fl = forward_loss(model, X.middleRows(start, len), Z ? &zc : nullptr, method, false, false);
    losses.segment(start, len) = fl.loss;
  }
  return pairwise_mean(losses);
}

RiskGradient risk_and_gradient(const ScoreModel& model, const Eigen::Ref<const Matrix>& X,
                               const Matrix* Z, Method method, double penalty_weight,
                               const ScoreBudget& budget) {
  const Index B = X.rows();
  const Index D = X.cols();
  require(B > 0, "risk: empty data");
  const bool c1_penalty = penalty_weight > 0.0 && method == Method::ism && std::isfinite(budget.C1);
  const bool c2_penalty = penalty_weight > 0.0 && std::isfinite(budget.Calpha);
  auto fl = forward_loss(model, X, Z, method, c1_penalty, c2_penalty);
  const auto& tape = fl.tape;
  const double mu = model.net_coef();
  const double inv_b = 1.0 / static_cast<double>(B);
  const Matrix Xc = X.transpose();

  RiskGradient out;
  out.risk = pairwise_mean(fl.loss);
  Matrix Fbar;
  std::vector<Matrix> Ftbar;
  std::vector<Matrix> F2bar;
  double dl_dlambda = 0.0;
  double dl_dmu = 0.0;
  if (method == Method::ism) {
    Fbar = (mu * inv_b) * fl.S;
    Ftbar.assign(static_cast<std::size_t>(D), Matrix());
    for (Index i = 0; i < D; ++i) {
      Matrix t = Matrix::Zero(D, B);
      t.row(i).setConstant(mu * inv_b);
      Ftbar[static_cast<std::size_t>(i)] = std::move(t);
    }
    const Vector sx = fl.S.cwiseProduct(Xc).colwise().sum().transpose();
    const Vector sf = fl.S.cwiseProduct(tape.output).colwise().sum().transpose();
    dl_dlambda = pairwise_mean((-sx.array() - static_cast<double>(D)).matrix());
    dl_dmu = pairwise_mean(sf + fl.divf);
  } else {
    Fbar = (2.0 * mu * inv_b) * fl.R;
    const Vector rx = fl.R.cwiseProduct(Xc).colwise().sum().transpose();
    const Vector rf = fl.R.cwiseProduct(tape.output).colwise().sum().transpose();
    dl_dlambda = -2.0 * pairwise_mean(rx);
    dl_dmu = 2.0 * pairwise_mean(rf);
  }

  if (penalty_weight > 0.0) {
    const double w = penalty_weight * inv_b;
    double pen = 0.0;
    const Matrix& F = tape.output;
    for (Index b = 0; b < B; ++b)
      for (Index l = 0; l < D; ++l) {
        const double ex = relu(std::abs(F(l, b)) - budget.C0);
        pen += ex * ex;
        Fbar(l, b) += 2.0 * w * ex * sign(F(l, b));
      }
    if (c1_penalty) {
      const double c1 = budget.C1 / (model.sigma_min() * model.sigma_min());
      for (Index i = 0; i < D; ++i) {
        const Matrix& Ft = tape.output_tangent[static_cast<std::size_t>(i)];
        Matrix& bar = Ftbar[static_cast<std::size_t>(i)];
        for (Index b = 0; b < B; ++b)
          for (Index l = 0; l < D; ++l) {
            const double ex = relu(std::abs(Ft(l, b)) - c1);
            pen += ex * ex;
            bar(l, b) += 2.0 * w * ex * sign(Ft(l, b));
          }
      }
    }
    out.penalty = w * pen;

    if (c2_penalty) {
      // hinge on the batch estimate of max_l |f_l|_{W^{2,2}}
      const double scale = method == Method::ism ? model.sigma_min() * model.sigma_min()
                                                 : ou_coeffs(model.time()).second;
      const double c2 = budget.Calpha / (scale * scale);
      const auto& F2 = tape.output_tangent2;
      Vector msq = Vector::Zero(D);
      for (const auto& m : F2) msq += m.rowwise().squaredNorm();
      msq *= inv_b;
      F2bar.assign(F2.size(), Matrix::Zero(D, B));
      for (Index l = 0; l < D; ++l) {
        const double nrm = std::sqrt(msq(l));
        const double ex = relu(nrm - c2);
        if (ex <= 0.0) continue;
        out.penalty += penalty_weight * ex * ex;
        const double coef = 2.0 * penalty_weight * ex * inv_b / nrm;
        for (std::size_t k = 0; k < F2.size(); ++k) F2bar[k].row(l) = coef * F2[k].row(l);
      }
    }
  }

  check_columns(Fbar, "output adjoint");
  for (const auto& m : Ftbar) check_columns(m, "tangent adjoint");
  for (const auto& m : F2bar) check_columns(m, "second-order adjoint");
  backward_tape(model.net(), tape, Fbar, Ftbar, out.grad.layers, F2bar);

  const auto [dlambda, dmu] = model.coef_derivatives();
  out.grad.raw = dl_dlambda * dlambda + dl_dmu * dmu;
  if (!std::isfinite(out.grad.raw)) throw NonFiniteGradient(0, "non-finite gradient of the scalar parameter");
  return out;
}

ParamGradient param_gradient(const ScoreModel& model, const DataBatch& batch, Method method) {
  if (method == Method::ism)
    require_domain(batch.provenance != Provenance::ou_pair, "ISM gradient needs a noisy batch");
  else
    require_domain(batch.provenance == Provenance::ou_pair && batch.z, "DSM gradient needs an OU-pair batch");
  return risk_and_gradient(model, batch.rows, batch.z ? &*batch.z : nullptr, method).grad;
}

namespace {

Vector model_params(const ScoreModel& m) {
  const Vector net = m.net().flatten();
  Vector out(net.size() + 1);
  out(0) = m.raw();
  out.tail(net.size()) = net;
  return out;
}

void set_model_params(ScoreModel& m, const Vector& flat) {
  m.set_raw(flat(0));
  m.net().assign(flat.tail(flat.size() - 1));
}

}  // namespace

double gradient_check(const ScoreModel& model, const DataBatch& batch, Method method, double step,
                      double penalty_weight, const ScoreBudget& budget) {
  const Matrix* Z = batch.z ? &*batch.z : nullptr;
  const bool penalized = penalty_weight > 0.0;
  auto objective = [&](const ScoreModel& m) {
    if (!penalized) return batch_risk(m, batch.rows, Z, method);
    const RiskGradient rg = risk_and_gradient(m, batch.rows, Z, method, penalty_weight, budget);
    return rg.risk + rg.penalty;
  };
  const Vector g = penalized ? risk_and_gradient(model, batch.rows, Z, method, penalty_weight, budget).grad.flatten()
                             : param_gradient(model, batch, method).flatten();
  const Vector theta = model_params(model);
  const double floor = 1e-4 * g.cwiseAbs().maxCoeff();
  ScoreModel probe = model;
  double worst = 0.0;
  for (Index k = 0; k < theta.size(); ++k) {
    Vector tp = theta;
    tp(k) += step;
    set_model_params(probe, tp);
    const double up = objective(probe);
    tp(k) = theta(k) - step;
    set_model_params(probe, tp);
    const double down = objective(probe);
    const double fd = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(fd), std::abs(g(k)), floor});
    if (denom > 0.0) worst = std::max(worst, std::abs(fd - g(k)) / denom);
  }
  return worst;
}

ScoreModel initial_model(const TrainConfig& config) {
  NetworkParams net = config.family == ModelFamily::constant ? NetworkParams::zeros(config.widths)
                                                             : init_params(config.widths, config.seed);
  if (config.method == Method::ism) return ScoreModel::ism(std::move(net), config.sigma_min, config.init_raw);
  return ScoreModel::dsm(std::move(net), config.t, config.init_raw);
}

TrainResult train_erm(const TrainConfig& config, const DataBatch& data, const OracleContext* oracle) {
  config.validate();
  const Index n = data.size();
  const Index D = data.dim();
  require(n > 0, "train: empty data");
  require_domain(D == config.widths.front(), "train: data dimension does not match the architecture");
  if (config.method == Method::ism) {
    require_domain(data.provenance == Provenance::noisy, "train: ISM needs a noisy batch");
  } else {
    require_domain(data.provenance == Provenance::ou_pair && data.x0 && data.z,
                   "train: DSM needs an OU-pair batch");
    require_domain(std::abs(data.time - config.t) <= 1e-12 * std::max(1.0, config.t),
                   "train: batch time does not match the configured t");
  }

  ScoreModel model = initial_model(config);
  const Matrix* Zfull = config.method == Method::dsm ? &*data.z : nullptr;
  const Index B = config.batch_size > 0 ? std::min(config.batch_size, n) : std::min<Index>(n, 256);
  const Index steps_per_epoch = (n + B - 1) / B;
  int epochs = config.epochs;
  if (config.target_steps)
    epochs = static_cast<int>((*config.target_steps + steps_per_epoch - 1) / steps_per_epoch);

  TrainResult result{model, {}};
  TrainHistory& hist = result.history;
  hist.initial_risk = batch_risk(model, data.rows, Zfull, config.method);
  hist.best_risk = hist.initial_risk;
  if (!std::isfinite(hist.initial_risk) || hist.initial_risk > 1e12)
    throw TrainingDiverged("train: initial risk is not finite", hist);

  if (config.grad_check) {
    DataBatch small = data;
    const Index m = std::min<Index>(n, 16);
    small.rows = data.rows.topRows(m);
    if (small.z) small.z = data.z->topRows(m);
    if (small.x0) small.x0 = data.x0->topRows(m);
    hist.grad_check_error = gradient_check(model, small, config.method);
  }

  // trainable mask over (raw, net params)
  Vector theta = model_params(model);
  Vector mask = Vector::Ones(theta.size());
  if (config.family == ModelFamily::constant) {
    mask.setZero();
    mask(0) = 1.0;
    const Index nb = model.net().layers().back().bias.size();
    mask.tail(nb).setOnes();
  }
  Vector m1 = Vector::Zero(theta.size());
  Vector m2 = Vector::Zero(theta.size());
  long step_count = 0;
  const long total_steps = config.target_steps ? *config.target_steps : static_cast<long>(epochs) * steps_per_epoch;

  Matrix probe;
  if (config.monitor_every > 0) probe = data.rows.topRows(std::min(config.monitor_probe, n));
  Matrix oracle_y;
  Matrix oracle_s;
  if (oracle) {
    oracle_y = sample_marginal(*oracle, config.oracle_mc, config.seed ^ 0x6f7261636c65ULL);
    oracle_s.resize(oracle_y.rows(), oracle_y.cols());
    for (Index i = 0; i < oracle_y.rows(); ++i)
      oracle_s.row(i) = true_score(*oracle, oracle_y.row(i).transpose()).transpose();
  }
  MonitorReport last_mon;
  bool have_mon = false;

  CounterRng root(config.seed);
  const auto [m_t, var_t] = config.method == Method::dsm ? ou_coeffs(config.t) : std::pair<double, double>{1.0, 0.0};
  const double sd_t = std::sqrt(var_t);
  std::vector<Index> perm(static_cast<std::size_t>(n));
  Matrix Xe = data.rows;
  Matrix Ze;
  if (config.method == Method::dsm) Ze = *data.z;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    CounterRng shuffle = root.split(2 * static_cast<std::uint64_t>(epoch));
    std::iota(perm.begin(), perm.end(), Index{0});
    for (Index i = n - 1; i > 0; --i)
      std::swap(perm[static_cast<std::size_t>(i)],
                perm[static_cast<std::size_t>(shuffle.below(static_cast<std::uint64_t>(i + 1)))]);
    if (config.method == Method::dsm) {
      // fresh noise draw per data point each epoch
      CounterRng noise = root.split(2 * static_cast<std::uint64_t>(epoch) + 1);
      for (Index i = 0; i < n; ++i) {
        CounterRng r = noise.split(static_cast<std::uint64_t>(i));
        const Vector x0 = data.x0->row(i).transpose();
        Vector xt(D);
        for (Index j = 0; j < D; ++j) xt(j) = m_t * x0(j) + sd_t * r.normal();
        Xe.row(i) = xt.transpose();
        Ze.row(i) = ou_residual(xt, x0, config.t).transpose();
      }
    }

    double last_gnorm = 0.0;
    for (Index start = 0; start < n && step_count < total_steps; start += B) {
      const Index len = std::min(B, n - start);
      Matrix Xb(len, D);
      Matrix Zb;
      if (config.method == Method::dsm) Zb.resize(len, D);
      for (Index r = 0; r < len; ++r) {
        const Index src = perm[static_cast<std::size_t>(start + r)];
        Xb.row(r) = Xe.row(src);
        if (config.method == Method::dsm) Zb.row(r) = Ze.row(src);
      }
      const auto rg = risk_and_gradient(model, Xb, config.method == Method::dsm ? &Zb : nullptr,
                                        config.method, config.penalty_weight, config.budget);
      const Vector g = rg.grad.flatten().cwiseProduct(mask);
      last_gnorm = g.norm();
      ++step_count;
      m1 = config.adam.beta1 * m1 + (1.0 - config.adam.beta1) * g;
      m2 = config.adam.beta2 * m2 + (1.0 - config.adam.beta2) * g.cwiseAbs2();
      const double c1 = 1.0 - std::pow(config.adam.beta1, static_cast<double>(step_count));
      const double c2 = 1.0 - std::pow(config.adam.beta2, static_cast<double>(step_count));
      theta.array() -= config.adam.step * (m1.array() / c1) / ((m2.array() / c2).sqrt() + config.adam.eps);
      set_model_params(model, theta);
    }

    const double risk = batch_risk(model, data.rows, Zfull, config.method);
    hist.risk.push_back(risk);
    hist.grad_norm.push_back(last_gnorm);
    hist.decoded.push_back(model.decoded());
    if (config.monitor_every > 0 && (!have_mon || (epoch + 1) % config.monitor_every == 0 || epoch + 1 == epochs)) {
      last_mon = sobolev_monitor(model, probe, config.monitor_alpha, config.budget);
      have_mon = true;
    }
    hist.C0_hat.push_back(last_mon.C0_hat);
    hist.C1_hat.push_back(last_mon.C1_hat);
    hist.Calpha_hat.push_back(last_mon.Calpha_hat);
    if (oracle) {
      Vector err(oracle_y.rows());
      for (Index i = 0; i < oracle_y.rows(); ++i)
        err(i) = (model.value(oracle_y.row(i).transpose()) - oracle_s.row(i).transpose()).squaredNorm();
      hist.score_error.push_back(pairwise_mean(err));
    }
    if (!std::isfinite(risk) || risk > 1e12)
      throw TrainingDiverged("train: risk diverged at epoch " + std::to_string(epoch), hist);
    if (risk < hist.best_risk) {
      hist.best_risk = risk;
      hist.best_epoch = epoch;
      result.model = model;
    }
  }
  return result;
}

}  // namespace scorelab
