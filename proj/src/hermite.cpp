#include "scorelab/hermite.hpp"

#include "scorelab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace scorelab {

double hermite_eval(int k, double x) {
  require(k >= 0, "hermite_eval: degree must be nonnegative");
  if (k == 0) return 1.0;
  double prev = 1.0;
  double cur = x;
  for (int j = 1; j < k; ++j) {
    const double next = x * cur - j * prev;
    prev = cur;
    cur = next;
  }
  return cur;
}

Vector hermite_table(int k, double x) {
  Vector h(k + 1);
  h(0) = 1.0;
  if (k >= 1) h(1) = x;
  for (int j = 1; j < k; ++j) h(j + 1) = x * h(j) - j * h(j - 1);
  return h;
}

double multi_factorial(const MultiIndex& k) {
  double out = 1.0;
  for (int ki : k)
    for (int j = 2; j <= ki; ++j) out *= j;
  return out;
}

std::vector<MultiIndex> multi_indices_of_order(int dim, int order) {
  std::vector<MultiIndex> out;
  MultiIndex current(static_cast<std::size_t>(dim), 0);
  auto recurse = [&](auto&& self, int axis, int remaining) -> void {
    if (axis == dim - 1) {
      current[static_cast<std::size_t>(axis)] = remaining;
      out.push_back(current);
      return;
    }
    for (int v = remaining; v >= 0; --v) {
      current[static_cast<std::size_t>(axis)] = v;
      self(self, axis + 1, remaining - v);
    }
  };
  if (dim == 0) {
    if (order == 0) out.push_back({});
    return out;
  }
  recurse(recurse, 0, order);
  return out;
}

int HermiteSeries::max_degree() const {
  int best = 0;
  for (const auto& [k, a] : terms_) {
    int total = 0;
    for (int ki : k) total += ki;
    best = std::max(best, total);
  }
  return best;
}

void HermiteSeries::add_term(const MultiIndex& k, const Vector& coef) {
  require(static_cast<int>(k.size()) == dim_, "HermiteSeries: multi-index has wrong length");
  require(coef.size() == out_dim_, "HermiteSeries: coefficient has wrong length");
  require(std::all_of(k.begin(), k.end(), [](int v) { return v >= 0; }),
          "HermiteSeries: multi-index entries must be nonnegative");
  auto [it, inserted] = terms_.try_emplace(k, coef);
  if (!inserted) it->second += coef;
}

Vector HermiteSeries::evaluate_with_tables(const std::vector<Vector>& tables) const {
  Vector out = Vector::Zero(out_dim_);
  for (const auto& [k, a] : terms_) {
    double basis = 1.0;
    for (int i = 0; i < dim_; ++i) basis *= tables[static_cast<std::size_t>(i)](k[static_cast<std::size_t>(i)]);
    out += basis * a;
  }
  return out;
}

Vector HermiteSeries::operator()(const Eigen::Ref<const Vector>& x) const {
  require_domain(x.size() == dim_, "HermiteSeries: point has wrong dimension");
  const int degree = max_degree();
  std::vector<Vector> tables;
  for (int i = 0; i < dim_; ++i) tables.push_back(hermite_table(degree, x(i)));
  return evaluate_with_tables(tables);
}

double series_l2_norm_sq(const HermiteSeries& s) {
  double total = 0.0;
  for (const auto& [k, a] : s.terms()) total += a.squaredNorm() * multi_factorial(k);
  return total;
}

HermiteSeries series_derivative(const HermiteSeries& s, const MultiIndex& p) {
  require(static_cast<int>(p.size()) == s.dim(), "series_derivative: multi-index has wrong length");
  HermiteSeries out(s.dim(), s.out_dim());
  for (const auto& [k, a] : s.terms()) {
    bool dominated = true;
    for (int i = 0; i < s.dim(); ++i) dominated = dominated && k[static_cast<std::size_t>(i)] >= p[static_cast<std::size_t>(i)];
    if (!dominated) continue;
    std::uint64_t ratio = 1;
    MultiIndex lowered = k;
    for (int i = 0; i < s.dim(); ++i) {
      const int ki = k[static_cast<std::size_t>(i)];
      const int pi = p[static_cast<std::size_t>(i)];
      if (ki > kMaxHermiteDegree)
        throw std::overflow_error("series_derivative: degree above 20 overflows factorial ratios");
      std::uint64_t axis_ratio = 1;
      for (int j = ki - pi + 1; j <= ki; ++j) axis_ratio *= static_cast<std::uint64_t>(j);
      if (__builtin_mul_overflow(ratio, axis_ratio, &ratio))
        throw std::overflow_error("series_derivative: factorial ratio overflows 64 bits");
      lowered[static_cast<std::size_t>(i)] = ki - pi;
    }
    out.add_term(lowered, static_cast<double>(ratio) * a);
  }
  return out;
}

HermiteSeries series_divergence(const HermiteSeries& s) {
  require_domain(s.out_dim() == s.dim(), "series_divergence: needs out_dim == dim");
  HermiteSeries out(s.dim(), 1);
  for (int i = 0; i < s.dim(); ++i) {
    MultiIndex e(static_cast<std::size_t>(s.dim()), 0);
    e[static_cast<std::size_t>(i)] = 1;
    const HermiteSeries di = series_derivative(s, e);
    for (const auto& [k, a] : di.terms()) out.add_term(k, a.segment(i, 1));
  }
  return out;
}

double series_sobolev_seminorm_sq(const HermiteSeries& s, int order) {
  require(order >= 0, "series_sobolev_seminorm_sq: order must be nonnegative");
  double total = 0.0;
  for (const auto& p : multi_indices_of_order(s.dim(), order))
    total += series_l2_norm_sq(series_derivative(s, p));
  return total;
}

double series_jacobian_frob_sq(const HermiteSeries& s) {
  require_domain(s.out_dim() == s.dim(), "series_jacobian_frob_sq: needs out_dim == dim");
  return series_sobolev_seminorm_sq(s, 1);
}

GaussianGnReport verify_gn_gaussian(const HermiteSeries& s, int alpha) {
  require_domain(s.out_dim() == s.dim(), "verify_gn_gaussian: needs out_dim == dim");
  require(alpha >= 2, "verify_gn_gaussian: alpha must be >= 2");
  const double a = alpha;
  const double D = s.dim();
  const double norm = series_l2_norm_sq(s);
  const double semi = series_sobolev_seminorm_sq(s, alpha);
  GaussianGnReport r;
  r.lhs_div = series_l2_norm_sq(series_divergence(s));
  r.lhs_jac = series_jacobian_frob_sq(s);
  const double tail = std::pow(norm, (a - 1.0) / a);
  r.rhs_div = a * D * std::pow(norm + semi, 1.0 / a) * tail;
  r.rhs_jac = a * std::pow(D, 1.0 - 1.0 / a) * std::pow(D * norm + semi, 1.0 / a) * tail;
  r.holds = r.lhs_div <= r.rhs_div && r.lhs_jac <= r.rhs_jac;
  return r;
}

namespace {

// Terms flattened into arrays for the Monte Carlo inner loop.
struct FlatSeries {
  std::vector<int> index;  // term-major, dim entries per term
  Matrix coef;             // out_dim x terms
  int dim = 0;

  explicit FlatSeries(const HermiteSeries& s) : dim(s.dim()) {
    coef.resize(s.out_dim(), static_cast<Index>(s.terms().size()));
    Index t = 0;
    for (const auto& [k, a] : s.terms()) {
      index.insert(index.end(), k.begin(), k.end());
      coef.col(t++) = a;
    }
  }

  Vector evaluate(const Matrix& tables) const {
    Vector basis(coef.cols());
    for (Index t = 0; t < coef.cols(); ++t) {
      double b = 1.0;
      for (int i = 0; i < dim; ++i) b *= tables(index[static_cast<std::size_t>(t * dim + i)], i);
      basis(t) = b;
    }
    return coef * basis;
  }
};

struct DeltaResult {
  double rhs;
  double se;
};

// rhs = c (w B + s C)^{1/a} B^{1-1/a} and the delta-method SE of rhs - mean(A).
DeltaResult weighted_rhs(double c, double w, double s, double a, const Vector& A, const Vector& B,
                         const Vector& C) {
  const double n = static_cast<double>(A.size());
  const double b = B.mean();
  const double cc = C.mean();
  const double inner = w * b + s * cc;
  DeltaResult out{0.0, 0.0};
  if (b <= 0.0) {
    Vector centered = A.array() - A.mean();
    out.se = std::sqrt(centered.squaredNorm() / std::max(1.0, n - 1.0) / n);
    return out;
  }
  out.rhs = c * std::pow(inner, 1.0 / a) * std::pow(b, 1.0 - 1.0 / a);
  const double d_inner = c * (1.0 / a) * std::pow(inner, 1.0 / a - 1.0) * std::pow(b, 1.0 - 1.0 / a);
  const double dB = d_inner * w + c * std::pow(inner, 1.0 / a) * (1.0 - 1.0 / a) * std::pow(b, -1.0 / a);
  const double dC = d_inner * s;
  const Vector lin = (dB * B + dC * C - A).eval();
  const Vector centered = lin.array() - lin.mean();
  out.se = std::sqrt(centered.squaredNorm() / std::max(1.0, n - 1.0) / n);
  return out;
}

}  // namespace

WeightedGnReport verify_gn_weighted(const OracleContext& ctx, const HermiteSeries& s, int alpha,
                                    const Matrix& samples, const SeriesInputMap& map) {
  require(alpha >= 2, "verify_gn_weighted: alpha must be >= 2");
  require_domain(s.out_dim() == s.dim() && s.dim() == ctx.dim(),
                 "verify_gn_weighted: series must map R^D to R^D");
  require(samples.cols() == ctx.dim() && samples.rows() >= 2, "verify_gn_weighted: bad samples");
  require(map.scale > 0.0, "verify_gn_weighted: input scale must be positive");
  const int D = s.dim();
  const Vector center = map.center.size() == 0 ? Vector::Zero(D) : map.center;

  const FlatSeries value(s);
  std::vector<FlatSeries> first;
  for (int i = 0; i < D; ++i) {
    MultiIndex e(static_cast<std::size_t>(D), 0);
    e[static_cast<std::size_t>(i)] = 1;
    first.emplace_back(series_derivative(s, e));
  }
  std::vector<FlatSeries> top;
  for (const auto& p : multi_indices_of_order(D, alpha)) top.emplace_back(series_derivative(s, p));

  const Index n = samples.rows();
  const int degree = std::max(1, s.max_degree());
  const double inv1 = 1.0 / map.scale;
  const double inv_alpha = std::pow(map.scale, -alpha);
  Vector A(n), B(n), C(n), J(n);
  Matrix tables(degree + 1, D);
  for (Index r = 0; r < n; ++r) {
    for (int i = 0; i < D; ++i)
      tables.col(i) = hermite_table(degree, (samples(r, i) - center(i)) * inv1);
    B(r) = value.evaluate(tables).squaredNorm();
    double div = 0.0;
    double frob = 0.0;
    for (int i = 0; i < D; ++i) {
      const Vector gi = first[static_cast<std::size_t>(i)].evaluate(tables) * inv1;
      div += gi(i);
      frob += gi.squaredNorm();
    }
    A(r) = div * div;
    J(r) = frob;
    double semi = 0.0;
    for (const auto& t : top) semi += (t.evaluate(tables) * inv_alpha).squaredNorm();
    C(r) = semi;
  }

  const double a = alpha;
  const double v = ctx.sigma_eff_sq;
  const double s2a = std::pow(v, a);
  WeightedGnReport report;
  report.lhs = A.mean();
  report.lhs_jac = J.mean();
  report.norm_sq = B.mean();
  report.seminorm_sq = C.mean();
  const DeltaResult div = weighted_rhs(a * D / v, 1.0, s2a, a, A, B, C);
  const DeltaResult jac =
      weighted_rhs(a * std::pow(static_cast<double>(D), 1.0 - 1.0 / a) / v, D, s2a, a, J, B, C);
  report.rhs = div.rhs;
  report.mc_se = div.se;
  report.rhs_jac = jac.rhs;
  report.mc_se_jac = jac.se;
  report.holds = report.lhs <= report.rhs + 3.0 * report.mc_se;
  return report;
}

WeightedGnReport verify_gn_weighted(const OracleContext& ctx, const HermiteSeries& s, int alpha,
                                    Index n_mc, std::uint64_t seed) {
  return verify_gn_weighted(ctx, s, alpha, sample_marginal(ctx, n_mc, seed), SeriesInputMap{});
}

HermiteSeries random_series(int dim, int max_degree, double decay, std::uint64_t seed,
                            int out_dim) {
  require(dim >= 1 && max_degree >= 0, "random_series: need dim >= 1 and degree >= 0");
  if (out_dim < 0) out_dim = dim;
  HermiteSeries s(dim, out_dim);
  CounterRng rng(seed);
  for (int order = 0; order <= max_degree; ++order) {
    const double scale = std::pow(decay, order);
    if (scale == 0.0) break;
    for (const auto& k : multi_indices_of_order(dim, order)) {
      Vector a(out_dim);
      for (int j = 0; j < out_dim; ++j) a(j) = rng.normal() * scale;
      s.add_term(k, a);
    }
  }
  return s;
}

}  // namespace scorelab
