#include "scorelab/gelu_net.hpp"

#include "scorelab/generators.hpp"
#include "scorelab/hermite.hpp"
#include "scorelab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace scorelab {

namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kInvSqrt2 = 0.70710678118654752440;

double phi(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }
double Phi(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

// phi^{(m)} with phi^{(-1)} = Phi.
double phi_derivative(int m, double x) {
  if (m < 0) return Phi(x);
  const double sign = (m % 2 == 0) ? 1.0 : -1.0;
  return sign * hermite_eval(m, x) * phi(x);
}

double sigmoid(double r) {
  if (r >= 0) return 1.0 / (1.0 + std::exp(-r));
  const double e = std::exp(r);
  return e / (1.0 + e);
}

}  // namespace

double gelu(double x) { return x * Phi(x); }
double gelu_prime(double x) { return x * phi(x) + Phi(x); }
double gelu_second(double x) { return phi(x) * (2.0 - x * x); }

double gelu_derivative(int order, double x) {
  require(order >= 0, "gelu_derivative: negative order");
  if (order == 0) return gelu(x);
  if (order == 1) return gelu_prime(x);
  return x * phi_derivative(order - 1, x) + order * phi_derivative(order - 2, x);
}

// ---------------------------------------------------------------- params

NetworkParams::NetworkParams(std::vector<Layer> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), "network needs at least one layer");
  for (std::size_t j = 0; j < layers_.size(); ++j) {
    const auto& l = layers_[j];
    require(l.weight.rows() > 0 && l.weight.cols() > 0, "network layer has zero width");
    require(l.bias.size() == l.weight.rows(), "bias length does not match weight rows");
    if (j > 0)
      require(l.weight.cols() == layers_[j - 1].weight.rows(), "layer shapes do not chain");
  }
  require(layers_.front().weight.cols() == layers_.back().weight.rows(),
          "network input and output widths must both equal D");
}

NetworkParams NetworkParams::zeros(const std::vector<int>& widths) {
  require(widths.size() >= 2, "architecture needs at least two widths");
  for (int w : widths) require(w >= 1, "architecture widths must be positive");
  std::vector<Layer> layers;
  for (std::size_t j = 1; j < widths.size(); ++j)
    layers.push_back({Matrix::Zero(widths[j], widths[j - 1]), Vector::Zero(widths[j])});
  return NetworkParams(std::move(layers));
}

std::vector<int> NetworkParams::widths() const {
  std::vector<int> w{input_dim()};
  for (const auto& l : layers_) w.push_back(static_cast<int>(l.weight.rows()));
  return w;
}

int NetworkParams::max_width() const {
  const auto w = widths();
  return *std::max_element(w.begin(), w.end());
}

double NetworkParams::max_abs() const {
  double b = 0.0;
  for (const auto& l : layers_) {
    b = std::max(b, l.weight.cwiseAbs().maxCoeff());
    b = std::max(b, l.bias.cwiseAbs().maxCoeff());
  }
  return b;
}

Index NetworkParams::nonzero_count(double threshold) const {
  Index s = 0;
  for (const auto& l : layers_) {
    s += (l.weight.array().abs() > threshold).count();
    s += (l.bias.array().abs() > threshold).count();
  }
  return s;
}

Index NetworkParams::parameter_count() const {
  Index p = 0;
  for (const auto& l : layers_) p += l.weight.size() + l.bias.size();
  return p;
}

Vector NetworkParams::flatten() const {
  Vector out(parameter_count());
  Index k = 0;
  for (const auto& l : layers_) {
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) out(k++) = l.weight(r, c);
    out.segment(k, l.bias.size()) = l.bias;
    k += l.bias.size();
  }
  return out;
}

void NetworkParams::assign(const Eigen::Ref<const Vector>& flat) {
  require(flat.size() == parameter_count(), "flat parameter vector has wrong length");
  Index k = 0;
  for (auto& l : layers_) {
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat(k++);
    l.bias = flat.segment(k, l.bias.size());
    k += l.bias.size();
  }
}

nlohmann::json NetworkParams::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(l.weight.size()));
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
    layers.push_back({{"weight", w}, {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
  }
  return {{"widths", widths()}, {"layers", layers}};
}

NetworkParams NetworkParams::from_json(const nlohmann::json& j) {
  require(j.is_object() && j.contains("widths") && j.contains("layers"),
          "network JSON needs widths and layers");
  const auto widths = j.at("widths").get<std::vector<int>>();
  NetworkParams p = zeros(widths);
  const auto& layers = j.at("layers");
  require(layers.is_array() && layers.size() == p.layers_.size(), "network JSON layer count mismatch");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = p.layers_[i];
    const auto w = layers[i].at("weight").get<std::vector<double>>();
    const auto b = layers[i].at("bias").get<std::vector<double>>();
    require(static_cast<Index>(w.size()) == l.weight.size() && static_cast<Index>(b.size()) == l.bias.size(),
            "network JSON layer shape mismatch");
    std::size_t k = 0;
    for (Index r = 0; r < l.weight.rows(); ++r)
      for (Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = w[k++];
    for (Index r = 0; r < l.bias.size(); ++r) l.bias(r) = b[static_cast<std::size_t>(r)];
  }
  return p;
}

// ---------------------------------------------------------------- forward

Vector net_forward(const NetworkParams& params, const Eigen::Ref<const Vector>& x) {
  require_domain(x.size() == params.input_dim(), "net_forward: input has wrong dimension");
  const auto& layers = params.layers();
  Vector h = x;
  for (std::size_t j = 0; j + 1 < layers.size(); ++j) {
    Vector u = layers[j].weight * h - layers[j].bias;
    h = u.unaryExpr([](double v) { return gelu(v); });
  }
  return layers.back().weight * h - layers.back().bias;
}

ValueJacobian net_value_jacobian(const NetworkParams& params, const Eigen::Ref<const Vector>& x) {
  require_domain(x.size() == params.input_dim(), "net_value_jacobian: input has wrong dimension");
  const auto& layers = params.layers();
  Vector h = x;
  Matrix T = Matrix::Identity(x.size(), x.size());
  for (std::size_t j = 0; j + 1 < layers.size(); ++j) {
    const Vector u = layers[j].weight * h - layers[j].bias;
    const Vector g1 = u.unaryExpr([](double v) { return gelu_prime(v); });
    h = u.unaryExpr([](double v) { return gelu(v); });
    T = g1.asDiagonal() * (layers[j].weight * T);
  }
  return {layers.back().weight * h - layers.back().bias, layers.back().weight * T};
}

Matrix net_jacobian(const NetworkParams& params, const Eigen::Ref<const Vector>& x) {
  return net_value_jacobian(params, x).jacobian;
}

double net_divergence(const NetworkParams& params, const Eigen::Ref<const Vector>& x) {
  return net_jacobian(params, x).trace();
}

namespace {

template <int Order>
Vector mixed_partial_impl(const NetworkParams& params, const Eigen::Ref<const Vector>& x,
                          const std::vector<int>& coords) {
  using S = NestedDual<Order>;
  VectorX<S> xs(x.size());
  for (Index m = 0; m < x.size(); ++m) {
    unsigned bits = 0;
    for (std::size_t j = 0; j < coords.size(); ++j)
      if (coords[j] == m) bits |= 1U << j;
    xs(m) = seed_dual<Order>(x(m), bits);
  }
  const VectorX<S> out = net_forward<S>(params, xs);
  Vector r(out.size());
  for (Index l = 0; l < out.size(); ++l) r(l) = top_tangent(out(l));
  return r;
}

}  // namespace

Vector net_mixed_partial(const NetworkParams& params, const Eigen::Ref<const Vector>& x,
                         const std::vector<int>& coordinates) {
  require_domain(x.size() == params.input_dim(), "net_mixed_partial: input has wrong dimension");
  for (int c : coordinates)
    require_domain(c >= 0 && c < x.size(), "net_mixed_partial: coordinate out of range");
  switch (coordinates.size()) {
    case 0: return net_forward(params, x);
    case 1: return mixed_partial_impl<1>(params, x, coordinates);
    case 2: return mixed_partial_impl<2>(params, x, coordinates);
    case 3: return mixed_partial_impl<3>(params, x, coordinates);
    default: throw std::invalid_argument("net_mixed_partial: order above 3 is unsupported");
  }
}

// ---------------------------------------------------------------- tape

NetworkTape forward_tape(const NetworkParams& params, const Eigen::Ref<const Matrix>& X,
                         bool with_tangents, bool with_second) {
  const Index D = params.input_dim();
  require_domain(X.rows() == D, "forward_tape: input has wrong dimension");
  require(with_tangents || !with_second, "forward_tape: second-order tangents need first-order ones");
  const auto& layers = params.layers();
  const std::size_t L = layers.size();
  const Index B = X.cols();
  const auto nd = static_cast<std::size_t>(D);

  NetworkTape tape;
  tape.with_tangents = with_tangents;
  tape.with_second = with_second;
  tape.inputs.reserve(L);
  tape.inputs.emplace_back(X);
  if (with_tangents) {
    tape.tangent_in.resize(L);
    tape.tangent_pre.resize(L - 1);
    tape.tangent_in[0].resize(nd);
    for (Index i = 0; i < D; ++i) {
      Matrix t = Matrix::Zero(D, B);
      t.row(i).setOnes();
      tape.tangent_in[0][static_cast<std::size_t>(i)] = std::move(t);
    }
  }
  if (with_second) {
    for (int p = 0; p < D; ++p)
      for (int q = p; q < D; ++q) tape.pairs.emplace_back(p, q);
    tape.tangent2_in.resize(L);
    tape.tangent2_pre.resize(L - 1);
    tape.tangent2_in[0].assign(tape.pairs.size(), Matrix::Zero(D, B));
  }
  const std::size_t np = tape.pairs.size();
  for (std::size_t j = 0; j + 1 < L; ++j) {
    const Matrix& A = layers[j].weight;
    Matrix U = A * tape.inputs[j];
    U.colwise() -= layers[j].bias;
    tape.gelu1.push_back(U.unaryExpr([](double v) { return gelu_prime(v); }));
    tape.inputs.push_back(U.unaryExpr([](double v) { return gelu(v); }));
    if (with_tangents) {
      const Matrix& G1 = tape.gelu1[j];
      auto& pre = tape.tangent_pre[j];
      auto& next = tape.tangent_in[j + 1];
      pre.resize(nd);
      next.resize(nd);
      for (std::size_t i = 0; i < nd; ++i) {
        pre[i] = A * tape.tangent_in[j][i];
        next[i] = G1.cwiseProduct(pre[i]);
      }
      if (with_second) {
        const Matrix G2 = U.unaryExpr([](double v) { return gelu_second(v); });
        auto& pre2 = tape.tangent2_pre[j];
        auto& next2 = tape.tangent2_in[j + 1];
        pre2.resize(np);
        next2.resize(np);
        for (std::size_t k = 0; k < np; ++k) {
          const auto [p, q] = tape.pairs[k];
          pre2[k] = A * tape.tangent2_in[j][k];
          next2[k] = G1.cwiseProduct(pre2[k]) +
                     G2.cwiseProduct(pre[static_cast<std::size_t>(p)]).cwiseProduct(pre[static_cast<std::size_t>(q)]);
        }
      }
    }
    tape.preact.push_back(std::move(U));
  }
  const Matrix& A = layers.back().weight;
  tape.output = A * tape.inputs.back();
  tape.output.colwise() -= layers.back().bias;
  if (with_tangents) {
    tape.output_tangent.resize(nd);
    for (std::size_t i = 0; i < nd; ++i) tape.output_tangent[i] = A * tape.tangent_in[L - 1][i];
  }
  if (with_second) {
    tape.output_tangent2.resize(np);
    for (std::size_t k = 0; k < np; ++k) tape.output_tangent2[k] = A * tape.tangent2_in[L - 1][k];
  }
  return tape;
}

void backward_tape(const NetworkParams& params, const NetworkTape& tape,
                   const Eigen::Ref<const Matrix>& output_adjoint,
                   const std::vector<Matrix>& tangent_adjoint, std::vector<Layer>& grads,
                   const std::vector<Matrix>& tangent2_adjoint) {
  const auto& layers = params.layers();
  const std::size_t L = layers.size();
  const bool second = !tangent2_adjoint.empty();
  const bool first = !tangent_adjoint.empty() || second;
  require(!first || tape.with_tangents, "backward_tape: tape has no tangents");
  require(!second || tape.with_second, "backward_tape: tape has no second-order tangents");
  require(!second || tangent2_adjoint.size() == tape.pairs.size(), "backward_tape: wrong number of second-order adjoints");
  if (grads.size() != L) {
    grads.clear();
    for (const auto& l : layers)
      grads.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
  }
  const std::size_t nd = first ? static_cast<std::size_t>(params.input_dim()) : 0;
  const std::size_t np = second ? tape.pairs.size() : 0;
  const Index B = output_adjoint.cols();

  // output layer
  const Matrix& AL = layers[L - 1].weight;
  grads[L - 1].weight.noalias() += output_adjoint * tape.inputs[L - 1].transpose();
  grads[L - 1].bias -= output_adjoint.rowwise().sum();
  Matrix Hbar = AL.transpose() * output_adjoint;
  std::vector<Matrix> Tbar(nd);
  for (std::size_t i = 0; i < nd; ++i) {
    if (tangent_adjoint.empty()) {
      Tbar[i] = Matrix::Zero(AL.cols(), B);
      continue;
    }
    grads[L - 1].weight.noalias() += tangent_adjoint[i] * tape.tangent_in[L - 1][i].transpose();
    Tbar[i] = AL.transpose() * tangent_adjoint[i];
  }
  std::vector<Matrix> T2bar(np);
  for (std::size_t k = 0; k < np; ++k) {
    grads[L - 1].weight.noalias() += tangent2_adjoint[k] * tape.tangent2_in[L - 1][k].transpose();
    T2bar[k] = AL.transpose() * tangent2_adjoint[k];
  }

  std::vector<Matrix> Zbar(nd);
  for (std::size_t jj = L - 1; jj-- > 0;) {
    const Matrix& A = layers[jj].weight;
    const Matrix& G1 = tape.gelu1[jj];
    Matrix Ubar = Hbar.cwiseProduct(G1);
    if (nd > 0) {
      const Matrix G2 = tape.preact[jj].unaryExpr([](double v) { return gelu_second(v); });
      const auto& Z = tape.tangent_pre[jj];
      for (std::size_t i = 0; i < nd; ++i) {
        Ubar += Tbar[i].cwiseProduct(G2).cwiseProduct(Z[i]);
        Zbar[i] = Tbar[i].cwiseProduct(G1);
      }
      if (np > 0) {
        const Matrix G3 = tape.preact[jj].unaryExpr([](double v) { return gelu_derivative(3, v); });
        const auto& Z2 = tape.tangent2_pre[jj];
        for (std::size_t k = 0; k < np; ++k) {
          const auto p = static_cast<std::size_t>(tape.pairs[k].first);
          const auto q = static_cast<std::size_t>(tape.pairs[k].second);
          const Matrix w2 = T2bar[k].cwiseProduct(G2);
          Ubar += w2.cwiseProduct(Z2[k]) + T2bar[k].cwiseProduct(G3).cwiseProduct(Z[p]).cwiseProduct(Z[q]);
          Zbar[p] += w2.cwiseProduct(Z[q]);
          Zbar[q] += w2.cwiseProduct(Z[p]);
          const Matrix Z2bar = T2bar[k].cwiseProduct(G1);
          grads[jj].weight.noalias() += Z2bar * tape.tangent2_in[jj][k].transpose();
          if (jj > 0) T2bar[k] = A.transpose() * Z2bar;
        }
      }
      for (std::size_t i = 0; i < nd; ++i) {
        grads[jj].weight.noalias() += Zbar[i] * tape.tangent_in[jj][i].transpose();
        if (jj > 0) Tbar[i] = A.transpose() * Zbar[i];
      }
    }
    grads[jj].weight.noalias() += Ubar * tape.inputs[jj].transpose();
    grads[jj].bias -= Ubar.rowwise().sum();
    if (jj > 0) Hbar = A.transpose() * Ubar;
  }
}

// ---------------------------------------------------------------- score model

ScoreModel ScoreModel::ism(NetworkParams net, double sigma_min, double a_raw) {
  require(sigma_min > 0.0 && sigma_min < 1.0, "ISM model needs sigma_min in (0, 1)");
  ScoreModel m;
  m.variant_ = ScoreVariant::ism;
  m.net_ = std::move(net);
  m.raw_ = a_raw;
  m.sigma_min_ = sigma_min;
  return m;
}

ScoreModel ScoreModel::dsm(NetworkParams net, double t, double sigma_tilde_raw) {
  if (!(t > 0.0)) throw std::domain_error("DSM model needs t > 0");
  ScoreModel m;
  m.variant_ = ScoreVariant::dsm;
  m.net_ = std::move(net);
  m.raw_ = sigma_tilde_raw;
  m.time_ = t;
  return m;
}

double ScoreModel::a() const {
  require(variant_ == ScoreVariant::ism, "a() is defined for ISM models only");
  const double top = 1.0 / (sigma_min_ * sigma_min_);
  const double a = 1.0 + (top - 1.0) * sigmoid(raw_);
  return a > 1.0 ? std::min(a, top) : std::nextafter(1.0, 2.0);
}

double ScoreModel::sigma_tilde() const {
  require(variant_ == ScoreVariant::dsm, "sigma_tilde() is defined for DSM models only");
  return std::min(sigmoid(raw_), std::nextafter(1.0, 0.0));
}

double ScoreModel::linear_coef() const {
  if (variant_ == ScoreVariant::ism) return a();
  const auto [m, s2] = ou_coeffs(time_);
  const double st = sigma_tilde();
  return 1.0 / (m * m * st * st + s2);
}

double ScoreModel::net_coef() const {
  if (variant_ == ScoreVariant::ism) return a();
  return ou_coeffs(time_).first * linear_coef();
}

std::pair<double, double> ScoreModel::coef_derivatives() const {
  const double s = sigmoid(raw_);
  const double ds = s * (1.0 - s);
  if (variant_ == ScoreVariant::ism) {
    const double da = (1.0 / (sigma_min_ * sigma_min_) - 1.0) * ds;
    return {da, da};
  }
  const auto [m, s2] = ou_coeffs(time_);
  const double st = sigma_tilde();
  const double den = m * m * st * st + s2;
  const double dlambda = -(2.0 * m * m * st * ds) / (den * den);
  return {dlambda, m * dlambda};
}

Vector ScoreModel::value(const Eigen::Ref<const Vector>& x) const {
  return net_coef() * net_forward(net_, x) - linear_coef() * x;
}

Matrix ScoreModel::jacobian(const Eigen::Ref<const Vector>& x) const {
  Matrix J = net_coef() * net_jacobian(net_, x);
  J.diagonal().array() -= linear_coef();
  return J;
}

double ScoreModel::divergence(const Eigen::Ref<const Vector>& x) const {
  return net_coef() * net_divergence(net_, x) - linear_coef() * static_cast<double>(x.size());
}

nlohmann::json ScoreModel::to_json() const {
  nlohmann::json j = net_.to_json();
  j["variant"] = variant_ == ScoreVariant::ism ? "ism" : "dsm";
  j["raw"] = raw_;
  if (variant_ == ScoreVariant::ism)
    j["sigma_min"] = sigma_min_;
  else
    j["t"] = time_;
  return j;
}

ScoreModel ScoreModel::from_json(const nlohmann::json& j) {
  require(j.is_object(), "checkpoint must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(key == "variant" || key == "raw" || key == "sigma_min" || key == "t" || key == "widths" ||
                key == "layers",
            "checkpoint has unknown key '" + key + "'");
  const auto variant = j.at("variant").get<std::string>();
  NetworkParams net = NetworkParams::from_json(j);
  const double raw = j.at("raw").get<double>();
  if (variant == "ism") return ism(std::move(net), j.at("sigma_min").get<double>(), raw);
  if (variant == "dsm") return dsm(std::move(net), j.at("t").get<double>(), raw);
  throw std::invalid_argument("checkpoint variant must be ism or dsm");
}

double ScoreModel::raw_for_a(double a, double sigma_min) {
  const double top = 1.0 / (sigma_min * sigma_min);
  require(a > 1.0 && a < top, "raw_for_a: a must lie strictly inside (1, sigma_min^-2)");
  const double s = (a - 1.0) / (top - 1.0);
  return std::log(s / (1.0 - s));
}

double ScoreModel::raw_for_sigma_tilde(double sigma_tilde) {
  require(sigma_tilde > 0.0 && sigma_tilde < 1.0, "raw_for_sigma_tilde: value must lie in (0, 1)");
  return std::log(sigma_tilde / (1.0 - sigma_tilde));
}

// ---------------------------------------------------------------- monitors

MonitorReport sobolev_monitor(const ScoreModel& model, const Matrix& probe, int alpha,
                              const ScoreBudget& budget) {
  if (alpha < 1 || alpha > 3)
    throw std::invalid_argument("sobolev_monitor: alpha must be 1, 2 or 3");
  const auto& net = model.net();
  const int D = net.input_dim();
  require_domain(probe.cols() == D, "sobolev_monitor: probe has wrong dimension");
  require(probe.rows() > 0, "sobolev_monitor: empty probe batch");

  // multi-index -> ordered coordinate list
  std::vector<std::vector<int>> seqs;
  for (const auto& k : multi_indices_of_order(D, alpha)) {
    std::vector<int> s;
    for (int i = 0; i < D; ++i)
      for (int r = 0; r < k[static_cast<std::size_t>(i)]; ++r) s.push_back(i);
    seqs.push_back(std::move(s));
  }

  MonitorReport rep;
  Vector sumsq = Vector::Zero(D);
  for (Index n = 0; n < probe.rows(); ++n) {
    const Vector x = probe.row(n).transpose();
    const auto vj = net_value_jacobian(net, x);
    rep.C0_hat = std::max(rep.C0_hat, vj.value.cwiseAbs().maxCoeff());
    rep.C1_hat = std::max(rep.C1_hat, vj.jacobian.cwiseAbs().maxCoeff());
    for (const auto& s : seqs) sumsq += net_mixed_partial(net, x, s).cwiseAbs2();
  }
  rep.Calpha_hat = std::sqrt(sumsq.maxCoeff() / static_cast<double>(probe.rows()));

  if (rep.C0_hat > budget.C0) ++rep.violations;
  if (model.variant() == ScoreVariant::ism) {
    const double smin2 = model.sigma_min() * model.sigma_min();
    if (rep.C1_hat > budget.C1 / smin2) ++rep.violations;
    if (rep.Calpha_hat > budget.Calpha * std::pow(smin2, -alpha)) ++rep.violations;
  } else {
    const double st2 = ou_coeffs(model.time()).second;
    if (rep.Calpha_hat > budget.Calpha * std::pow(st2, -alpha)) ++rep.violations;
  }
  return rep;
}

StabilityAudit perturbation_stability_audit(const NetworkParams& params, double epsilon, double R,
                                            int trials, std::uint64_t seed) {
  require(epsilon >= 0.0, "perturbation_stability_audit: epsilon must be nonnegative");
  require(R > 0.0, "perturbation_stability_audit: R must be positive");
  require(trials >= 1, "perturbation_stability_audit: trials must be positive");
  const int D = params.input_dim();
  const int L = params.depth();
  const int per_axis = std::max(2, static_cast<int>(std::floor(std::pow(2000.0, 1.0 / D))));
  Index grid_size = 1;
  for (int i = 0; i < D; ++i) grid_size *= per_axis;

  StabilityAudit audit;
  audit.holds = true;
  CounterRng root(seed);
  const double w_inf = static_cast<double>(params.max_width());
  const double r1 = std::max(R, 1.0);
  for (int tr = 0; tr < trials; ++tr) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(tr));
    NetworkParams other = params;
    Vector flat = other.flatten();
    for (Index k = 0; k < flat.size(); ++k) flat(k) += rng.uniform(-epsilon, epsilon);
    other.assign(flat);

    const double b1 = std::max({params.max_abs(), other.max_abs(), 1.0});
    const double bound = std::sqrt(static_cast<double>(D)) * std::pow(4.0, L) * std::pow(b1, L) *
                         std::pow(w_inf + 1.0, L) * r1 * epsilon;
    const double div_bound = D * std::pow(16.0, L) * std::pow(w_inf + 1.0, 2 * L - 1) *
                             std::pow(b1, 2 * L - 1) * r1 * epsilon;

    double gap = 0.0;
    double div_gap = 0.0;
    Vector x(D);
    for (Index g = 0; g < grid_size; ++g) {
      Index rem = g;
      for (int i = 0; i < D; ++i) {
        x(i) = -R + 2.0 * R * static_cast<double>(rem % per_axis) / (per_axis - 1);
        rem /= per_axis;
      }
      const auto a = net_value_jacobian(params, x);
      const auto b = net_value_jacobian(other, x);
      gap = std::max(gap, (a.value - b.value).norm());
      div_gap = std::max(div_gap, std::abs(a.jacobian.trace() - b.jacobian.trace()));
    }
    audit.max_gap = std::max(audit.max_gap, gap);
    audit.max_div_gap = std::max(audit.max_div_gap, div_gap);
    audit.bound = std::max(audit.bound, bound);
    audit.div_bound = std::max(audit.div_bound, div_bound);
    if (gap > bound || div_gap > div_bound) audit.holds = false;
  }
  return audit;
}

}  // namespace scorelab
