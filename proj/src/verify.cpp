#include "scorelab/verify.hpp"

#include "scorelab/gelu_net.hpp"
#include "scorelab/hermite.hpp"
#include "scorelab/objectives.hpp"
#include "scorelab/oracle.hpp"
#include "scorelab/rng.hpp"
#include "scorelab/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace scorelab {

bool VerifyReport::passed() const {
  for (const auto& c : checks)
    if (!c.passed) return false;
  return !checks.empty();
}

void VerifyReport::add(std::string name, bool ok, std::string detail) {
  checks.push_back({std::move(name), ok, std::move(detail)});
}

void VerifyReport::merge(const VerifyReport& other) {
  checks.insert(checks.end(), other.checks.begin(), other.checks.end());
  csv += other.csv;
  seconds += other.seconds;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

int pick(int fixed, int lo, int hi, CounterRng& rng) {
  if (fixed > 0) return fixed;
  return lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
}

NetworkParams random_net(const std::vector<int>& widths, std::uint64_t seed, double gain) {
  NetworkParams p = init_params(widths, seed);
  CounterRng rng(seed ^ 0xb1a5ULL);
  for (auto& l : p.layers()) {
    l.weight *= gain;
    for (Index i = 0; i < l.bias.size(); ++i) l.bias(i) = rng.uniform(-0.5, 0.5);
  }
  return p;
}

}  // namespace

std::vector<GeneratorSpec> verification_generators() {
  Vector c(2);
  c << 0.3, -0.2;
  Vector off(2);
  off << -0.2, 0.1;
  Matrix A(2, 1);
  A << 0.6, -0.4;
  Vector amp(2);
  amp << 0.5, 0.5;
  Matrix freq(2, 1);
  freq << 1.0, 1.0;
  Vector phase(2);
  phase << 0.0, std::numbers::pi / 2.0;
  return {GeneratorSpec::constant(c), GeneratorSpec::affine(off, A),
          GeneratorSpec::trigonometric(amp, freq, phase)};
}

// ---------------------------------------------------------------- gn

VerifyReport verify_gn_suite(const VerifyOptions& o) {
  Timer timer;
  VerifyReport rep;
  rep.suite = "gn";
  const int trials = o.trials > 0 ? o.trials : 1000;
  CounterRng root(o.seed);
  std::ostringstream csv;
  csv << "kind,trial,dim,degree,alpha,lhs_div,rhs_div,lhs_jac,rhs_jac,margin\n";
  int violations = 0;
  for (int tr = 0; tr < trials; ++tr) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(tr));
    const int dim = pick(o.dim, 1, 3, rng);
    const int degree = pick(o.degree, 1, 8, rng);
    const int alpha = pick(o.alpha, 2, 3, rng);
    const double decay = rng.uniform(0.2, 1.0);
    const HermiteSeries s = random_series(dim, degree, decay, rng());
    const GaussianGnReport g = verify_gn_gaussian(s, alpha);
    if (!g.holds) ++violations;
    const double margin = std::min(g.rhs_div - g.lhs_div, g.rhs_jac - g.lhs_jac);
    csv << "gaussian," << tr << ',' << dim << ',' << degree << ',' << alpha << ',' << full(g.lhs_div) << ','
        << full(g.rhs_div) << ',' << full(g.lhs_jac) << ',' << full(g.rhs_jac) << ',' << full(margin) << '\n';
  }
  rep.add("gaussian weight, both claims", violations == 0,
          std::to_string(violations) + " violations in " + std::to_string(trials) + " series");

  if (o.weighted_series > 0) {
    const Index n_mc = o.n_mc > 0 ? o.n_mc : 100000;
    const auto gens = verification_generators();
    int wv = 0;
    int total = 0;
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t gi = 0; gi < gens.size(); ++gi) {
      const OracleContext ctx = make_context(gens[gi], NoiseConfig::make(0.4, 0.4));
      const Matrix samples = sample_marginal(ctx, n_mc, root.split(1000 + gi)());
      for (int alpha : {2, 3}) {
        if (o.alpha > 0 && alpha != o.alpha) continue;
        for (int k = 0; k < o.weighted_series; ++k) {
          CounterRng rng = root.split(100000 + 1000 * gi + 10 * static_cast<std::uint64_t>(k) + alpha);
          const int degree = pick(o.degree > 0 ? std::min(o.degree, 4) : 0, 1, 4, rng);
          const HermiteSeries s = random_series(2, degree, rng.uniform(0.2, 1.0), rng());
          const WeightedGnReport w = verify_gn_weighted(ctx, s, alpha, samples, SeriesInputMap{});
          ++total;
          if (!w.holds) ++wv;
          const double z = w.mc_se > 0.0 ? (w.lhs - w.rhs) / w.mc_se : (w.lhs > w.rhs ? 1e300 : -1e300);
          worst = std::max(worst, z);
          csv << "weighted," << k << ",2," << degree << ',' << alpha << ',' << full(w.lhs) << ',' << full(w.rhs)
              << ',' << full(w.lhs_jac) << ',' << full(w.rhs_jac) << ',' << full(w.rhs - w.lhs) << '\n';
        }
      }
    }
    rep.add("weighted lemma (i), 3 standard errors", wv == 0,
            std::to_string(wv) + " violations in " + std::to_string(total) + " series, worst (lhs-rhs)/se " +
                num(worst));
  }
  rep.csv = csv.str();
  rep.seconds = timer.seconds();
  return rep;
}

// ---------------------------------------------------------------- gelu

VerifyReport verify_gelu_suite(const VerifyOptions& o) {
  Timer timer;
  VerifyReport rep;
  rep.suite = "gelu";
  const long grid = o.grid > 0 ? o.grid : 1000000;
  double m1 = 0.0, m2 = 0.0, lip0 = 0.0, lip1 = 0.0;
  const double h = 40.0 / static_cast<double>(grid - 1);
  double prev0 = gelu(-20.0), prev1 = gelu_prime(-20.0);
  for (long i = 0; i < grid; ++i) {
    const double x = -20.0 + 40.0 * static_cast<double>(i) / static_cast<double>(grid - 1);
    const double g1 = gelu_prime(x);
    m1 = std::max(m1, std::abs(g1));
    m2 = std::max(m2, std::abs(gelu_second(x)));
    if (i > 0) {
      const double g0 = gelu(x);
      lip0 = std::max(lip0, std::abs(g0 - prev0) / h);
      lip1 = std::max(lip1, std::abs(g1 - prev1) / h);
      prev0 = g0;
      prev1 = g1;
    }
  }
  rep.add("max |GELU'| and |GELU''| <= 2 on the grid", m1 <= 2.0 && m2 <= 2.0,
          "max|GELU'| = " + full(m1) + ", max|GELU''| = " + full(m2) + " over " + std::to_string(grid) + " points");
  rep.add("GELU and GELU' difference quotients <= 2", lip0 <= 2.0 && lip1 <= 2.0,
          "GELU " + num(lip0) + ", GELU' " + num(lip1));

  // closed forms against finite differences
  double dmax = 0.0;
  for (int i = 0; i <= 200; ++i) {
    const double x = -6.0 + 0.06 * i;
    const double e = 1e-5;
    dmax = std::max(dmax, std::abs(gelu_prime(x) - (gelu(x + e) - gelu(x - e)) / (2 * e)));
    dmax = std::max(dmax, std::abs(gelu_second(x) - (gelu_prime(x + e) - gelu_prime(x - e)) / (2 * e)));
    dmax = std::max(dmax, std::abs(gelu_derivative(3, x) - (gelu_second(x + e) - gelu_second(x - e)) / (2 * e)));
  }
  rep.add("GELU derivatives match finite differences", dmax < 1e-6, "max gap " + num(dmax));

  // network derivatives
  CounterRng root(o.seed);
  double jac_gap = 0.0, div_gap = 0.0, sec_gap = 0.0, third_gap = 0.0, trace_gap = 0.0;
  for (int k = 0; k < 10; ++k) {
    CounterRng rng = root.split(static_cast<std::uint64_t>(k));
    const int D = pick(0, 2, 4, rng);
    const int L = pick(0, 1, 3, rng);
    std::vector<int> widths{D};
    for (int j = 1; j < L; ++j) widths.push_back(6);
    widths.push_back(D);
    const NetworkParams net = random_net(widths, rng(), 1.0);
    Vector x(D);
    for (int i = 0; i < D; ++i) x(i) = rng.uniform(-1.5, 1.5);
    const double e = 1e-4;
    const Matrix J = net_jacobian(net, x);
    double fd_trace = 0.0;
    for (int q = 0; q < D; ++q) {
      Vector xp = x, xm = x;
      xp(q) += e;
      xm(q) -= e;
      const Vector col = (net_forward(net, xp) - net_forward(net, xm)) / (2 * e);
      jac_gap = std::max(jac_gap, (col - J.col(q)).cwiseAbs().maxCoeff());
      fd_trace += col(q);
      const Matrix Jd = (net_jacobian(net, xp) - net_jacobian(net, xm)) / (2 * e);
      for (int p = 0; p < D; ++p) {
        const Vector d2 = net_mixed_partial(net, x, {p, q});
        sec_gap = std::max(sec_gap, (d2 - Jd.col(p)).cwiseAbs().maxCoeff());
        const Vector d3 = net_mixed_partial(net, x, {p, p, q});
        const Vector d3fd = (net_mixed_partial(net, xp, {p, p}) - net_mixed_partial(net, xm, {p, p})) / (2 * e);
        third_gap = std::max(third_gap, (d3 - d3fd).cwiseAbs().maxCoeff());
      }
    }
    div_gap = std::max(div_gap, std::abs(fd_trace - net_divergence(net, x)));
    const ScoreModel m = (k % 2 == 0) ? ScoreModel::ism(net, 0.3, rng.uniform(-2, 2))
                                      : ScoreModel::dsm(net, 0.5, rng.uniform(-2, 2));
    trace_gap = std::max(trace_gap, std::abs(m.divergence(x) - m.jacobian(x).trace()));
  }
  rep.add("network Jacobian matches finite differences", jac_gap < 1e-5, "max gap " + num(jac_gap));
  rep.add("network divergence matches finite-difference trace", div_gap < 1e-5, "max gap " + num(div_gap));
  rep.add("second-order partials match finite differences", sec_gap < 1e-5, "max gap " + num(sec_gap));
  rep.add("third-order partials match finite differences", third_gap < 1e-5, "max gap " + num(third_gap));
  rep.add("score divergence equals Jacobian trace", trace_gap < 1e-10, "max gap " + num(trace_gap));

  // proximity bounds under weight perturbation
  const int audits = o.trials > 0 ? o.trials : 50;
  int bad = 0;
  double worst = 0.0;
  std::ostringstream csv;
  csv << "net,D,L,epsilon,max_gap,bound,max_div_gap,div_bound,holds\n";
  for (int k = 0; k < audits; ++k) {
    CounterRng rng = root.split(1000 + static_cast<std::uint64_t>(k));
    const int D = pick(0, 1, 3, rng);
    const int L = pick(0, 1, 3, rng);
    std::vector<int> widths{D};
    for (int j = 1; j < L; ++j) widths.push_back(pick(0, 2, 6, rng));
    widths.push_back(D);
    const NetworkParams net = random_net(widths, rng(), rng.uniform(0.5, 2.0));
    const double eps = std::pow(10.0, rng.uniform(-4.0, -1.0));
    const StabilityAudit a = perturbation_stability_audit(net, eps, rng.uniform(0.5, 3.0), 3, rng());
    if (!a.holds) ++bad;
    worst = std::max({worst, a.max_gap / a.bound, a.max_div_gap / a.div_bound});
    csv << k << ',' << D << ',' << L << ',' << full(eps) << ',' << full(a.max_gap) << ',' << full(a.bound) << ','
        << full(a.max_div_gap) << ',' << full(a.div_bound) << ',' << (a.holds ? 1 : 0) << '\n';
  }
  rep.add("network proximity bounds under perturbation", bad == 0,
          std::to_string(bad) + " violations in " + std::to_string(audits) + " nets, worst gap/bound " + num(worst));
  rep.csv = csv.str();
  rep.seconds = timer.seconds();
  return rep;
}

// ---------------------------------------------------------------- identities

VerifyReport verify_identities_suite(const VerifyOptions& o) {
  Timer timer;
  VerifyReport rep;
  rep.suite = "identities";
  const int models = o.trials > 0 ? o.trials : 20;
  const Index n_mc = o.n_mc > 0 ? o.n_mc : 100000;
  const double t = std::log(2.0);
  const NoiseConfig noise = NoiseConfig::make(0.4, 0.3);
  const auto gens = verification_generators();
  CounterRng root(o.seed);
  std::ostringstream csv;
  csv << "method,generator,model,gap,se,holds,control_gap,control_se,control_holds\n";
  int ism_fail = 0, ism_ctrl_pass = 0, dsm_fail = 0, dsm_ctrl_pass = 0;
  double ism_worst = 0.0, dsm_worst = 0.0;
  for (std::size_t gi = 0; gi < gens.size(); ++gi) {
    const std::string gname = to_string(gens[gi].kind());
    std::optional<OracleContext> ctx0, ctxt;
    if (o.ism) ctx0 = make_context(gens[gi], noise);
    if (o.dsm) ctxt = make_context(gens[gi], noise, t);
    for (int k = 0; k < models; ++k) {
      CounterRng rng = root.split(1000 * gi + static_cast<std::uint64_t>(k));
      const NetworkParams net = random_net({2, 8, 8, 2}, rng(), rng.uniform(0.5, 1.5));
      const std::uint64_t mc_seed = rng();
      if (o.ism) {
        const ScoreModel m = ScoreModel::ism(net, noise.sigma_min, rng.uniform(-2.0, 2.0));
        const NegatedDivergence corrupted(m);
        const ScoreField& used = o.negate_divergence ? static_cast<const ScoreField&>(corrupted) : m;
        const IdentityCheck c = ism_identity_check(used, *ctx0, n_mc, mc_seed);
        const DivergenceOffset off(used, 1.0);
        const IdentityCheck nc = ism_identity_check(off, *ctx0, n_mc, mc_seed);
        if (!c.holds) ++ism_fail;
        if (nc.holds) ++ism_ctrl_pass;
        if (c.se > 0.0) ism_worst = std::max(ism_worst, std::abs(c.gap) / c.se);
        csv << "ism," << gname << ',' << k << ',' << full(c.gap) << ',' << full(c.se) << ',' << c.holds << ','
            << full(nc.gap) << ',' << full(nc.se) << ',' << nc.holds << '\n';
      }
      if (o.dsm) {
        const ScoreModel m = ScoreModel::dsm(net, t, rng.uniform(-2.0, 2.0));
        const IdentityCheck c = dsm_identity_check(m, *ctxt, n_mc, mc_seed);
        const IdentityCheck nc = dsm_identity_check(m, *ctxt, n_mc, mc_seed, 0.5);
        if (!c.holds) ++dsm_fail;
        if (nc.holds) ++dsm_ctrl_pass;
        if (c.se > 0.0) dsm_worst = std::max(dsm_worst, std::abs(c.gap) / c.se);
        csv << "dsm," << gname << ',' << k << ',' << full(c.gap) << ',' << full(c.se) << ',' << c.holds << ','
            << full(nc.gap) << ',' << full(nc.se) << ',' << nc.holds << '\n';
      }
    }
  }
  const int total = models * static_cast<int>(gens.size());
  if (o.ism) {
    rep.add("ISM identity within 4 standard errors", ism_fail == 0,
            std::to_string(ism_fail) + " failures in " + std::to_string(total) + ", worst |gap|/se " + num(ism_worst));
    rep.add("ISM control (divergence + 1) detected", ism_ctrl_pass == 0,
            std::to_string(total - ism_ctrl_pass) + " of " + std::to_string(total) + " detected");
  }
  if (o.dsm) {
    rep.add("DSM identity within 4 standard errors", dsm_fail == 0,
            std::to_string(dsm_fail) + " failures in " + std::to_string(total) + ", worst |gap|/se " + num(dsm_worst));
    rep.add("DSM control (sigma_t halved) detected", dsm_ctrl_pass == 0,
            std::to_string(total - dsm_ctrl_pass) + " of " + std::to_string(total) + " detected");
  }
  rep.csv = csv.str();
  rep.seconds = timer.seconds();
  return rep;
}

// ---------------------------------------------------------------- oracle

VerifyReport verify_oracle_suite(const VerifyOptions& o) {
  Timer timer;
  VerifyReport rep;
  rep.suite = "oracle";
  auto gens = verification_generators();
  gens.push_back(GeneratorSpec::polynomial(
      2, 3, {{0, {1, 0}, 0.6}, {0, {0, 2}, -0.3}, {1, {1, 1}, 0.8}, {2, {2, 0}, 0.5}, {2, {0, 1}, -0.4}}));
  const int points = o.trials > 0 ? o.trials : 200;
  CounterRng root(o.seed);
  std::ostringstream csv;
  csv << "generator,time,score_fd_gap,jacobian_fd_gap,symmetry,bound1_violations,bound2_violations\n";
  double worst_score = 0.0, worst_jac = 0.0, worst_sym = 0.0, worst_wsum = 0.0;
  int b1 = 0, b2 = 0;
  for (std::size_t gi = 0; gi < gens.size(); ++gi) {
    for (int timed = 0; timed < 2; ++timed) {
      const auto t = timed ? std::optional<double>(std::log(2.0)) : std::nullopt;
      const OracleContext ctx = make_context(gens[gi], NoiseConfig::make(0.4, 0.4), t);
      worst_wsum = std::max(worst_wsum, std::abs(ctx.weights.sum() - 1.0));
      const Matrix Y = sample_marginal(ctx, points, root.split(gi * 2 + timed)());
      const Index D = ctx.dim();
      double gs = 0.0, gj = 0.0, gsym = 0.0;
      int v1 = 0, v2 = 0;
      for (Index r = 0; r < Y.rows(); ++r) {
        const Vector y = Y.row(r).transpose();
        const auto sj = true_score_with_jacobian(ctx, y);
        for (Index i = 0; i < D; ++i) {
          const double h = 1e-3;
          auto lp = [&](double dx) {
            Vector z = y;
            z(i) += dx;
            return log_density(ctx, z);
          };
          const double fd = (-lp(2 * h) + 8 * lp(h) - 8 * lp(-h) + lp(-2 * h)) / (12 * h);
          gs = std::max(gs, std::abs(fd - sj.score(i)));
          const double e = 1e-4;
          Vector yp = y, ym = y;
          yp(i) += e;
          ym(i) -= e;
          const Vector col = (true_score(ctx, yp) - true_score(ctx, ym)) / (2 * e);
          gj = std::max(gj, (col - sj.jacobian.col(i)).cwiseAbs().maxCoeff());
        }
        const Matrix Jraw = true_score_jacobian(ctx, y);
        gsym = std::max(gsym, (Jraw - Jraw.transpose()).cwiseAbs().maxCoeff());
        if (!check_derivative_bound(ctx, y, 1).holds) ++v1;
        if (!check_derivative_bound(ctx, y, 2).holds) ++v2;
      }
      worst_score = std::max(worst_score, gs);
      worst_jac = std::max(worst_jac, gj);
      worst_sym = std::max(worst_sym, gsym);
      b1 += v1;
      b2 += v2;
      csv << to_string(gens[gi].kind()) << ',' << (timed ? "ln2" : "0") << ',' << full(gs) << ',' << full(gj) << ','
          << full(gsym) << ',' << v1 << ',' << v2 << '\n';
    }
  }
  rep.add("quadrature weights sum to 1", worst_wsum <= 1e-12, "max deviation " + num(worst_wsum));
  rep.add("score matches log-density gradient", worst_score <= 1e-6, "max gap " + num(worst_score));
  rep.add("Jacobian matches finite differences of the score", worst_jac <= 1e-5, "max gap " + num(worst_jac));
  rep.add("Jacobian is symmetric", worst_sym < 1e-12, "max asymmetry " + num(worst_sym));
  rep.add("score derivative bound, k = 1", b1 == 0, std::to_string(b1) + " violations");
  rep.add("score derivative bound, k = 2", b2 == 0, std::to_string(b2) + " violations");
  rep.csv = csv.str();
  rep.seconds = timer.seconds();
  return rep;
}

// ---------------------------------------------------------------- gradients

VerifyReport verify_gradients_suite(const VerifyOptions& o) {
  Timer timer;
  VerifyReport rep;
  rep.suite = "gradients";
  Vector amp = Vector::Constant(4, 0.5);
  Matrix freq(4, 1);
  freq << 1, 1, 2, 2;
  Vector phase(4);
  phase << 0, std::numbers::pi / 2, 0, std::numbers::pi / 2;
  const GeneratorSpec g = GeneratorSpec::trigonometric(amp, freq, phase);
  const NoiseConfig noise = NoiseConfig::make(0.3, 0.25);
  const double t = std::log(2.0);
  CounterRng root(o.seed);
  std::ostringstream csv;
  csv << "method,depth,width,penalty,max_rel_error\n";
  for (Method m : {Method::ism, Method::dsm}) {
    double worst = 0.0;
    double worst_pen = 0.0;
    for (int L = 1; L <= 3; ++L) {
      std::vector<int> widths{4};
      for (int j = 1; j < L; ++j) widths.push_back(8);
      widths.push_back(4);
      const std::uint64_t s = root.split(static_cast<std::uint64_t>(L) + (m == Method::dsm ? 10 : 0))();
      const DataBatch b = m == Method::ism ? sample_noisy(g, noise, 8, s) : sample_ou_pair(g, noise, t, 8, s);
      const NetworkParams net = random_net(widths, s ^ 0x5eedULL, 1.0);
      const ScoreModel model = m == Method::ism ? ScoreModel::ism(net, noise.sigma_min, 0.7)
                                                : ScoreModel::dsm(net, t, -0.4);
      const double e = gradient_check(model, b, m);
      worst = std::max(worst, e);
      csv << to_string(m) << ',' << L << ",8,0," << full(e) << '\n';
      // every hinge active, so the penalized objective is smooth here
      ScoreBudget tight{0.01, 0.001, 1e-6};
      const double ep = gradient_check(model, b, m, 1e-5, 3.0, tight);
      worst_pen = std::max(worst_pen, ep);
      csv << to_string(m) << ',' << L << ",8,3," << full(ep) << '\n';
    }
    rep.add(to_string(m) + " gradient matches finite differences", worst < 1e-4, "max rel error " + num(worst));
    rep.add(to_string(m) + " penalized gradient matches finite differences", worst_pen < 1e-4,
            "max rel error " + num(worst_pen));
  }
  rep.csv = csv.str();
  rep.seconds = timer.seconds();
  return rep;
}

VerifyReport run_verify(const std::string& suite, const VerifyOptions& options) {
  if (suite == "gn") return verify_gn_suite(options);
  if (suite == "gelu") return verify_gelu_suite(options);
  if (suite == "identities") return verify_identities_suite(options);
  if (suite == "oracle") return verify_oracle_suite(options);
  if (suite == "gradients") return verify_gradients_suite(options);
  throw std::invalid_argument("unknown verify suite '" + suite +
                              "' (expected gn, gelu, identities, oracle or gradients)");
}

}  // namespace scorelab
