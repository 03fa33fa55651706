#include "scorelab/generators.hpp"

#include "scorelab/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace scorelab {

namespace {

constexpr double kBoundSlack = 1e-12;
constexpr double kAuditPoints = 1e4;

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

Matrix matrix_from_json(const nlohmann::json& j, Index cols) {
  require(j.is_array(), "matrix must be an array of rows");
  Matrix m(static_cast<Index>(j.size()), cols);
  for (Index r = 0; r < m.rows(); ++r) {
    const auto row = j[static_cast<std::size_t>(r)].get<std::vector<double>>();
    require(static_cast<Index>(row.size()) == cols, "matrix row has wrong length");
    for (Index c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) {
    Vector row = m.row(r).transpose();
    rows.push_back(to_std(row));
  }
  return rows;
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    require(known, "unknown key '" + item.key() + "' in " + where);
  }
}

}  // namespace

std::string to_string(GeneratorKind kind) {
  switch (kind) {
    case GeneratorKind::constant: return "constant";
    case GeneratorKind::affine: return "affine";
    case GeneratorKind::trigonometric: return "trigonometric";
    case GeneratorKind::polynomial: return "polynomial";
  }
  return "unknown";
}

GeneratorKind generator_kind_from_string(const std::string& name) {
  if (name == "constant") return GeneratorKind::constant;
  if (name == "affine") return GeneratorKind::affine;
  if (name == "trigonometric") return GeneratorKind::trigonometric;
  if (name == "polynomial") return GeneratorKind::polynomial;
  throw std::invalid_argument("unknown generator kind '" + name + "'");
}

GeneratorSpec GeneratorSpec::constant(Vector value, double beta) {
  GeneratorSpec g;
  g.kind_ = GeneratorKind::constant;
  g.latent_dim_ = 0;
  g.ambient_dim_ = static_cast<int>(value.size());
  g.beta_ = beta;
  g.offset_ = std::move(value);
  g.finalize();
  return g;
}

GeneratorSpec GeneratorSpec::affine(Vector offset, Matrix matrix, double beta) {
  require(matrix.rows() == offset.size(), "affine generator: matrix rows must equal D");
  GeneratorSpec g;
  g.kind_ = GeneratorKind::affine;
  g.latent_dim_ = static_cast<int>(matrix.cols());
  g.ambient_dim_ = static_cast<int>(offset.size());
  g.beta_ = beta;
  g.offset_ = std::move(offset);
  g.matrix_ = std::move(matrix);
  g.finalize();
  return g;
}

GeneratorSpec GeneratorSpec::trigonometric(Vector amplitude, Matrix frequency, Vector phase,
                                           double beta) {
  require(frequency.rows() == amplitude.size() && phase.size() == amplitude.size(),
          "trigonometric generator: amplitude, frequency rows and phase must have length D");
  GeneratorSpec g;
  g.kind_ = GeneratorKind::trigonometric;
  g.latent_dim_ = static_cast<int>(frequency.cols());
  g.ambient_dim_ = static_cast<int>(amplitude.size());
  g.beta_ = beta;
  g.amplitude_ = std::move(amplitude);
  g.matrix_ = std::move(frequency);
  g.phase_ = std::move(phase);
  g.finalize();
  return g;
}

GeneratorSpec GeneratorSpec::polynomial(int latent_dim, int ambient_dim,
                                        std::vector<PolynomialTerm> terms, double beta) {
  GeneratorSpec g;
  g.kind_ = GeneratorKind::polynomial;
  g.latent_dim_ = latent_dim;
  g.ambient_dim_ = ambient_dim;
  g.beta_ = beta;
  for (const auto& t : terms) {
    require(t.output >= 0 && t.output < ambient_dim, "polynomial term output out of range");
    require(static_cast<int>(t.power.size()) == latent_dim, "polynomial term power has wrong length");
    require(std::all_of(t.power.begin(), t.power.end(), [](int p) { return p >= 0; }),
            "polynomial powers must be nonnegative");
  }
  g.terms_ = std::move(terms);
  g.finalize();
  return g;
}

double GeneratorSpec::analytic_bound() const {
  switch (kind_) {
    case GeneratorKind::constant: return offset_.norm();
    case GeneratorKind::affine: {
      // Convex in u, so the maximum over the cube sits at a vertex.
      double best = 0.0;
      const std::uint64_t vertices = std::uint64_t{1} << latent_dim_;
      for (std::uint64_t mask = 0; mask < vertices; ++mask) {
        Vector u(latent_dim_);
        for (int i = 0; i < latent_dim_; ++i) u(i) = (mask >> i) & 1U ? 1.0 : 0.0;
        best = std::max(best, (offset_ + matrix_ * u).norm());
      }
      return best;
    }
    case GeneratorKind::trigonometric: return amplitude_.norm();
    case GeneratorKind::polynomial: {
      Vector per_output = Vector::Zero(ambient_dim_);
      for (const auto& t : terms_) per_output(t.output) += std::abs(t.coef);
      return per_output.norm();
    }
  }
  return 0.0;
}

void GeneratorSpec::scale_outputs(double factor) {
  switch (kind_) {
    case GeneratorKind::constant: offset_ *= factor; break;
    case GeneratorKind::affine:
      offset_ *= factor;
      matrix_ *= factor;
      break;
    case GeneratorKind::trigonometric: amplitude_ *= factor; break;
    case GeneratorKind::polynomial:
      for (auto& t : terms_) t.coef *= factor;
      break;
  }
}

void GeneratorSpec::finalize() {
  require(ambient_dim_ >= 1, "generator: ambient dimension D must be >= 1");
  require(latent_dim_ <= ambient_dim_, "generator: need d <= D");
  if (kind_ == GeneratorKind::constant) {
    require(latent_dim_ == 0, "constant generator has d = 0");
  } else {
    require(latent_dim_ >= 1, "non-constant generator needs d >= 1");
  }
  require(beta_ > 0.0, "generator: beta must be positive");

  double bound = analytic_bound();
  if (bound > 1.0) {
    rescale_ = 1.0 / bound;
    scale_outputs(rescale_);
    bound = analytic_bound();
  }
  sup_bound_ = bound;

  // Grid audit of sup ||g|| <= 1 with about 10^4 points.
  if (latent_dim_ == 0) {
    require(evaluate(Vector(0)).norm() <= 1.0 + kBoundSlack, "generator exceeds unit sup norm");
    return;
  }
  const auto per_axis = static_cast<Index>(
      std::max(2.0, std::ceil(std::pow(kAuditPoints, 1.0 / latent_dim_))));
  std::vector<Index> counter(static_cast<std::size_t>(latent_dim_), 0);
  Vector u(latent_dim_);
  double sup = 0.0;
  while (true) {
    for (int i = 0; i < latent_dim_; ++i)
      u(i) = static_cast<double>(counter[static_cast<std::size_t>(i)]) /
             static_cast<double>(per_axis - 1);
    sup = std::max(sup, evaluate(u).norm());
    int axis = 0;
    while (axis < latent_dim_ && ++counter[static_cast<std::size_t>(axis)] == per_axis) {
      counter[static_cast<std::size_t>(axis)] = 0;
      ++axis;
    }
    if (axis == latent_dim_) break;
  }
  require(sup <= 1.0 + kBoundSlack, "generator exceeds unit sup norm on the audit grid");
  require(sup <= sup_bound_ + kBoundSlack, "generator analytic bound is not an upper bound");
}

Vector GeneratorSpec::evaluate(const Eigen::Ref<const Vector>& u) const {
  switch (kind_) {
    case GeneratorKind::constant: return offset_;
    case GeneratorKind::affine: return offset_ + matrix_ * u;
    case GeneratorKind::trigonometric: {
      const Vector arg = 2.0 * std::numbers::pi * (matrix_ * u) + phase_;
      return amplitude_.cwiseProduct(arg.array().sin().matrix());
    }
    case GeneratorKind::polynomial: {
      Vector out = Vector::Zero(ambient_dim_);
      for (const auto& t : terms_) {
        double mono = t.coef;
        for (int i = 0; i < latent_dim_; ++i) mono *= std::pow(u(i), t.power[static_cast<std::size_t>(i)]);
        out(t.output) += mono;
      }
      return out;
    }
  }
  return {};
}

Vector GeneratorSpec::operator()(const Eigen::Ref<const Vector>& u) const {
  require_domain(u.size() == latent_dim_, "generator: latent point has wrong dimension");
  require_domain((u.array() >= 0.0).all() && (u.array() <= 1.0).all(),
                 "generator: latent point outside the unit cube");
  return evaluate(u);
}

nlohmann::json GeneratorSpec::to_json() const {
  nlohmann::json coeffs;
  switch (kind_) {
    case GeneratorKind::constant: coeffs["value"] = to_std(offset_); break;
    case GeneratorKind::affine:
      coeffs["offset"] = to_std(offset_);
      coeffs["matrix"] = matrix_to_json(matrix_);
      break;
    case GeneratorKind::trigonometric:
      coeffs["amplitude"] = to_std(amplitude_);
      coeffs["frequency"] = matrix_to_json(matrix_);
      coeffs["phase"] = to_std(phase_);
      break;
    case GeneratorKind::polynomial: {
      coeffs["terms"] = nlohmann::json::array();
      for (const auto& t : terms_)
        coeffs["terms"].push_back({{"output", t.output}, {"power", t.power}, {"coef", t.coef}});
      break;
    }
  }
  return {{"kind", to_string(kind_)}, {"d", latent_dim_}, {"D", ambient_dim_},
          {"coeffs", coeffs}, {"beta", beta_}};
}

GeneratorSpec GeneratorSpec::from_json(const nlohmann::json& j) {
  check_keys(j, {"kind", "d", "D", "coeffs", "beta"}, "generator");
  const GeneratorKind kind = generator_kind_from_string(j.at("kind").get<std::string>());
  const int d = j.at("d").get<int>();
  const int D = j.at("D").get<int>();
  const double beta = j.value("beta", kind == GeneratorKind::constant || kind == GeneratorKind::affine
                                          ? 1.0 : 2.0);
  const auto& c = j.at("coeffs");
  GeneratorSpec g = [&] {
    switch (kind) {
      case GeneratorKind::constant:
        check_keys(c, {"value"}, "constant coeffs");
        return constant(vector_from_json(c.at("value")), beta);
      case GeneratorKind::affine:
        check_keys(c, {"offset", "matrix"}, "affine coeffs");
        return affine(vector_from_json(c.at("offset")), matrix_from_json(c.at("matrix"), d), beta);
      case GeneratorKind::trigonometric:
        check_keys(c, {"amplitude", "frequency", "phase"}, "trigonometric coeffs");
        return trigonometric(vector_from_json(c.at("amplitude")),
                             matrix_from_json(c.at("frequency"), d),
                             vector_from_json(c.at("phase")), beta);
      case GeneratorKind::polynomial: {
        check_keys(c, {"terms"}, "polynomial coeffs");
        std::vector<PolynomialTerm> terms;
        for (const auto& t : c.at("terms")) {
          check_keys(t, {"output", "power", "coef"}, "polynomial term");
          terms.push_back({t.at("output").get<int>(), t.at("power").get<std::vector<int>>(),
                           t.at("coef").get<double>()});
        }
        return polynomial(d, D, std::move(terms), beta);
      }
    }
    throw std::invalid_argument("unknown generator kind");
  }();
  require(g.latent_dim() == d && g.ambient_dim() == D, "generator: d/D disagree with coefficients");
  return g;
}

NoiseConfig NoiseConfig::make(double sigma, double sigma_min) {
  require(sigma_min > 0.0 && sigma_min <= sigma && sigma < 1.0,
          "noise config needs 0 < sigma_min <= sigma < 1");
  return {sigma, sigma_min};
}

DataBatch sample_noisy(const GeneratorSpec& spec, double sigma, Index n, std::uint64_t seed) {
  require(n >= 1, "sample_noisy: n must be >= 1");
  require(sigma >= 0.0 && sigma < 1.0, "sample_noisy: sigma must be in [0, 1)");
  const Index d = spec.latent_dim();
  const Index D = spec.ambient_dim();
  DataBatch batch;
  batch.seed = seed;
  batch.provenance = sigma == 0.0 ? Provenance::clean : Provenance::noisy;
  batch.rows.resize(n, D);
  const CounterRng root(seed);
  Vector u(d);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(i));
    for (Index k = 0; k < d; ++k) u(k) = rng.uniform();
    Vector y = spec.evaluate(u);
    for (Index k = 0; k < D; ++k) y(k) += sigma * rng.normal();
    batch.rows.row(i) = y.transpose();
  }
  return batch;
}

DataBatch sample_noisy(const GeneratorSpec& spec, const NoiseConfig& noise, Index n,
                       std::uint64_t seed) {
  return sample_noisy(spec, noise.sigma, n, seed);
}

std::pair<double, double> ou_coeffs(double t) {
  require_domain(t >= 0.0, "ou_coeffs: time must be nonnegative");
  return {std::exp(-t), -std::expm1(-2.0 * t)};
}

Vector ou_residual(const Eigen::Ref<const Vector>& xt, const Eigen::Ref<const Vector>& x0,
                   double t) {
  const auto [m, var] = ou_coeffs(t);
  const double sd = std::sqrt(var);
  return (xt - m * x0) / sd;
}

DataBatch sample_ou_pair(const GeneratorSpec& spec, const NoiseConfig& noise, double t, Index n,
                         std::uint64_t seed) {
  require_domain(t > 0.0, "sample_ou_pair: time must be positive");
  DataBatch clean = sample_noisy(spec, noise, n, seed);
  const auto [m, var] = ou_coeffs(t);
  const double sd = std::sqrt(var);
  const Index D = spec.ambient_dim();
  DataBatch batch;
  batch.seed = seed;
  batch.provenance = Provenance::ou_pair;
  batch.time = t;
  batch.rows.resize(n, D);
  Matrix z(n, D);
  const CounterRng root(seed);
  for (Index i = 0; i < n; ++i) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(i)).split(0x0u);
    Vector x0 = clean.rows.row(i).transpose();
    Vector xt(D);
    for (Index k = 0; k < D; ++k) xt(k) = m * x0(k) + sd * rng.normal();
    batch.rows.row(i) = xt.transpose();
    z.row(i) = ou_residual(xt, x0, t).transpose();
  }
  batch.x0 = std::move(clean.rows);
  batch.z = std::move(z);
  return batch;
}

DataBatch concatenate(const DataBatch& first, const DataBatch& second) {
  require(first.provenance == second.provenance && first.dim() == second.dim(),
          "concatenate: batches must share provenance and dimension");
  require(first.provenance != Provenance::ou_pair || first.time == second.time,
          "concatenate: OU batches must share the time");
  DataBatch out;
  out.seed = first.seed;
  out.provenance = first.provenance;
  out.time = first.time;
  auto stack = [](const Matrix& a, const Matrix& b) {
    Matrix m(a.rows() + b.rows(), a.cols());
    m << a, b;
    return m;
  };
  out.rows = stack(first.rows, second.rows);
  if (first.x0 && second.x0) out.x0 = stack(*first.x0, *second.x0);
  if (first.z && second.z) out.z = stack(*first.z, *second.z);
  return out;
}

std::string batch_to_csv(const Matrix& rows) {
  std::ostringstream out;
  out << std::setprecision(17);
  for (Index k = 0; k < rows.cols(); ++k) out << (k ? "," : "") << 'x' << k;
  out << '\n';
  for (Index i = 0; i < rows.rows(); ++i) {
    for (Index k = 0; k < rows.cols(); ++k) out << (k ? "," : "") << rows(i, k);
    out << '\n';
  }
  return out.str();
}

Matrix matrix_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> values;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (header) {
      header = false;
      // A header row starts with a letter; plain numeric files have none.
      if (std::isalpha(static_cast<unsigned char>(line.front()))) continue;
    }
    std::vector<double> row;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) row.push_back(std::stod(cell));
    require(values.empty() || row.size() == values.front().size(), "csv: ragged rows");
    values.push_back(std::move(row));
  }
  const Index cols = values.empty() ? 0 : static_cast<Index>(values.front().size());
  Matrix m(static_cast<Index>(values.size()), cols);
  for (Index i = 0; i < m.rows(); ++i)
    for (Index k = 0; k < cols; ++k) m(i, k) = values[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)];
  return m;
}

}  // namespace scorelab
