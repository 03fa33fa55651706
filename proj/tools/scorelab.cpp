// scorelab command line: data generation, oracle queries, training, sweeps,
// rate fits and the verification suites.

#include "scorelab/evaluation.hpp"
#include "scorelab/experiment.hpp"
#include "scorelab/generators.hpp"
#include "scorelab/oracle.hpp"
#include "scorelab/training.hpp"
#include "scorelab/verify.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

using namespace scorelab;
using nlohmann::json;

namespace {

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int default_threads() {
  if (const char* env = std::getenv("SCORELAB_THREADS")) {
    try {
      const int t = std::stoi(env);
      if (t > 0) return t;
    } catch (const std::exception&) {
    }
  }
  return 1;
}

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_file_atomic(out, text);
  }
}

json load_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw UsageError(path + ": " + e.what());
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// A generator file is either a bare generator object or a full experiment
// config; in the latter case noise and t defaults come from it.
struct GeneratorInput {
  GeneratorSpec spec = GeneratorSpec::constant(Vector::Zero(1));
  std::optional<NoiseConfig> noise;
  std::optional<double> t;
};

GeneratorInput load_generator(const std::string& path) {
  const json j = load_json(path);
  GeneratorInput in;
  if (j.contains("generator")) {
    const ExperimentConfig c = ExperimentConfig::from_json(j);
    in.spec = c.generator;
    in.noise = c.noise;
    in.t = c.time();
  } else {
    in.spec = GeneratorSpec::from_json(j);
  }
  return in;
}

NoiseConfig resolve_noise(const GeneratorInput& in, double sigma, double sigma_min) {
  if (sigma > 0.0) return NoiseConfig::make(sigma, sigma_min > 0.0 ? sigma_min : sigma);
  if (in.noise) return *in.noise;
  throw UsageError("--sigma is required for a bare generator file");
}

std::string numbered_header(const std::string& prefix, Index count) {
  std::string h;
  for (Index i = 0; i < count; ++i) h += (i ? "," : "") + prefix + std::to_string(i);
  return h;
}

std::string matrix_csv_rows(const Matrix& m) {
  std::string s;
  for (Index r = 0; r < m.rows(); ++r) {
    for (Index c = 0; c < m.cols(); ++c) s += (c ? "," : "") + fmt(m(r, c));
    s += "\n";
  }
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Score estimation experiments with GELU networks and a quadrature oracle"};
  app.require_subcommand(1);
  int threads = default_threads();
  app.add_option("--threads", threads, "worker threads (default $SCORELAB_THREADS or 1)")->check(CLI::PositiveNumber);

  // generate
  auto* gen = app.add_subcommand("generate", "sample the data law (or an OU pair with --t)");
  std::string gen_spec, gen_out;
  double gen_sigma = 0.0, gen_sigma_min = 0.0, gen_t = 0.0;
  Index gen_n = 1000;
  std::uint64_t gen_seed = 0;
  bool gen_clean = false;
  gen->add_option("--spec", gen_spec, "generator or experiment JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--sigma", gen_sigma, "noise level");
  gen->add_option("--sigma-min", gen_sigma_min, "known lower bound on sigma");
  gen->add_option("--t", gen_t, "OU time; emits x_t,x_0,z columns");
  gen->add_option("--n", gen_n, "sample size")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "seed");
  gen->add_flag("--clean", gen_clean, "emit g(U) without noise");
  gen->add_option("--out", gen_out, "output CSV (default stdout)");

  // oracle
  auto* orc = app.add_subcommand("oracle", "true score and Jacobian at given points");
  std::string orc_spec, orc_points, orc_out;
  double orc_sigma = 0.0, orc_sigma_min = 0.0, orc_t = 0.0;
  orc->add_option("--spec", orc_spec, "generator or experiment JSON")->required()->check(CLI::ExistingFile);
  orc->add_option("--points", orc_points, "CSV of query points")->required()->check(CLI::ExistingFile);
  orc->add_option("--sigma", orc_sigma, "noise level");
  orc->add_option("--sigma-min", orc_sigma_min, "known lower bound on sigma");
  orc->add_option("--t", orc_t, "time of the marginal (default 0)");
  orc->add_option("--out", orc_out, "output CSV (default stdout)");

  // train
  auto* trn = app.add_subcommand("train", "train one (n, seed) run of a config");
  std::string trn_config, trn_out, trn_log;
  Index trn_n = 0;
  std::uint64_t trn_seed = 0;
  trn->add_option("--config", trn_config, "experiment JSON")->required()->check(CLI::ExistingFile);
  trn->add_option("--n", trn_n, "sample size (default: first sweep value)");
  trn->add_option("--seed", trn_seed, "sweep seed");
  trn->add_option("--out", trn_out, "checkpoint JSON")->required();
  trn->add_option("--log", trn_log, "training curve CSV");

  // eval
  auto* evl = app.add_subcommand("eval", "score and Jacobian errors of a checkpoint");
  std::string evl_config, evl_ckpt, evl_out;
  std::optional<Index> evl_nmc;
  std::optional<std::uint64_t> evl_seed;
  evl->add_option("--config", evl_config, "experiment JSON")->required()->check(CLI::ExistingFile);
  evl->add_option("--checkpoint", evl_ckpt, "checkpoint JSON from train")->required()->check(CLI::ExistingFile);
  evl->add_option("--n-mc", evl_nmc, "Monte Carlo draws (default from config)");
  evl->add_option("--seed", evl_seed, "evaluation seed (default from config)");
  evl->add_option("--out", evl_out, "output JSON (default stdout)");

  // sweep
  auto* swp = app.add_subcommand("sweep", "all (n, seed) runs of a config");
  std::string swp_config, swp_out;
  swp->add_option("--config", swp_config, "experiment JSON")->required()->check(CLI::ExistingFile);
  swp->add_option("--out", swp_out, "output directory (default: config output_dir)");
  swp->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);

  // rates
  auto* rts = app.add_subcommand("rates", "fit error rates from a sweep CSV");
  std::string rts_runs, rts_config, rts_out;
  rts->add_option("--runs", rts_runs, "runs.csv from sweep")->required()->check(CLI::ExistingFile);
  rts->add_option("--config", rts_config, "experiment JSON (for beta and d)")->required()->check(CLI::ExistingFile);
  rts->add_option("--out", rts_out, "directory for rate_curve.csv and rate_fit.json");

  // verify
  auto* ver = app.add_subcommand("verify", "run a verification suite");
  std::string ver_suite, ver_out;
  VerifyOptions vo;
  ver->add_option("suite", ver_suite, "gn, gelu, identities, oracle or gradients")->required();
  ver->add_option("--seed", vo.seed, "seed");
  ver->add_option("--trials", vo.trials, "trials (suite specific)");
  ver->add_option("--dim", vo.dim, "gn: series dimension");
  ver->add_option("--degree", vo.degree, "gn: max degree");
  ver->add_option("--alpha", vo.alpha, "gn: alpha");
  ver->add_option("--weighted", vo.weighted_series, "gn: weighted series per generator and alpha");
  ver->add_option("--n-mc", vo.n_mc, "Monte Carlo size");
  ver->add_option("--grid", vo.grid, "gelu: grid points");
  ver->add_flag("--negate-divergence", vo.negate_divergence, "identities: corrupt every model");
  ver->add_option("--out", ver_out, "per-trial CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gen) {
      const GeneratorInput in = load_generator(gen_spec);
      if (gen_clean) {
        const DataBatch b = sample_noisy(in.spec, 0.0, gen_n, gen_seed);
        emit(gen_out, numbered_header("x", b.dim()) + "\n" + matrix_csv_rows(b.rows));
        return kPass;
      }
      const NoiseConfig noise = resolve_noise(in, gen_sigma, gen_sigma_min);
      if (gen->count("--t") || (in.t && !gen->count("--sigma"))) {
        const double t = gen->count("--t") ? gen_t : *in.t;
        const DataBatch b = sample_ou_pair(in.spec, noise, t, gen_n, gen_seed);
        Matrix all(b.size(), 3 * b.dim());
        all << b.rows, *b.x0, *b.z;
        emit(gen_out, numbered_header("xt", b.dim()) + "," + numbered_header("x0", b.dim()) + "," +
                          numbered_header("z", b.dim()) + "\n" + matrix_csv_rows(all));
      } else {
        const DataBatch b = sample_noisy(in.spec, noise, gen_n, gen_seed);
        emit(gen_out, numbered_header("y", b.dim()) + "\n" + matrix_csv_rows(b.rows));
      }
      return kPass;
    }

    if (*orc) {
      const GeneratorInput in = load_generator(orc_spec);
      const NoiseConfig noise = resolve_noise(in, orc_sigma, orc_sigma_min);
      std::optional<double> t = in.t;
      if (orc->count("--t")) t = orc_t > 0.0 ? std::optional<double>(orc_t) : std::nullopt;
      const OracleContext ctx = make_context(in.spec, noise, t);
      const Matrix Y = matrix_from_csv(read_file(orc_points));
      if (Y.cols() != ctx.dim()) throw UsageError("points have the wrong dimension");
      const Index D = ctx.dim();
      Matrix out(Y.rows(), D + D * D);
      for (Index r = 0; r < Y.rows(); ++r) {
        const auto sj = true_score_with_jacobian(ctx, Y.row(r).transpose());
        out.row(r).head(D) = sj.score.transpose();
        for (Index i = 0; i < D; ++i)
          for (Index k = 0; k < D; ++k) out(r, D + i * D + k) = sj.jacobian(i, k);
      }
      std::string header = numbered_header("s", D);
      for (Index i = 0; i < D; ++i)
        for (Index k = 0; k < D; ++k) header += ",J" + std::to_string(i) + "_" + std::to_string(k);
      emit(orc_out, header + "\n" + matrix_csv_rows(out));
      return kPass;
    }

    if (*trn) {
      const ExperimentConfig c = ExperimentConfig::load(trn_config);
      Index n = trn_n;
      if (n == 0) {
        if (c.sweep.n_values.empty()) throw UsageError("--n is required when the sweep lists no n");
        n = c.sweep.n_values.front();
      }
      std::optional<OracleContext> ctx;
      if (!trn_log.empty()) ctx = make_context(c.generator, c.noise, c.time());
      const TrainResult res = train_single(c, n, trn_seed, ctx ? &*ctx : nullptr);
      json ck = res.model.to_json();
      write_file_atomic(trn_out, ck.dump(2) + "\n");
      if (!trn_log.empty()) write_file_atomic(trn_log, training_curve_csv(res.history));
      std::cout << "best_risk " << fmt(res.history.best_risk) << " at epoch " << res.history.best_epoch
                << ", decoded " << fmt(res.model.decoded()) << "\n";
      return kPass;
    }

    if (*evl) {
      const ExperimentConfig c = ExperimentConfig::load(evl_config);
      const ScoreModel model = ScoreModel::from_json(load_json(evl_ckpt));
      const OracleContext ctx = make_context(c.generator, c.noise, c.time());
      const Index n_mc = evl_nmc.value_or(c.eval.n_mc);
      const std::uint64_t seed = evl_seed.value_or(c.eval.seed);
      const auto [se, je] = score_and_jacobian_error(model, ctx, n_mc, seed);
      const json out = {{"score_error", se.mean}, {"score_error_se", se.se},
                        {"jacobian_error", je.mean}, {"jacobian_error_se", je.se},
                        {"n_mc", n_mc}, {"seed", seed}};
      emit(evl_out, out.dump(2) + "\n");
      return kPass;
    }

    if (*swp) {
      ExperimentConfig c = ExperimentConfig::load(swp_config);
      if (!swp_out.empty()) c.output_dir = swp_out;
      const auto records = run_sweep(c, threads, [](const RunRecord& r) {
        std::cerr << r.method << " n=" << r.n << " seed=" << r.seed << " " << r.status
                  << " score_error=" << r.score_error << " (" << static_cast<long>(r.wall_ms) << " ms)\n";
      });
      if (c.output_dir.empty()) std::cout << run_records_to_csv(records);
      int failed = 0;
      for (const auto& r : records) failed += r.status != "ok";
      if (!c.output_dir.empty() && !records.empty())
        emit_plotdata(records, c.output_dir, c.generator.beta(), c.generator.latent_dim());
      return failed == 0 ? kPass : kFail;
    }

    if (*rts) {
      const ExperimentConfig c = ExperimentConfig::load(rts_config);
      const auto records = run_records_from_csv(read_file(rts_runs));
      const double beta = c.generator.beta();
      const int d = c.generator.latent_dim();
      bool ok = true;
      json out = json::array();
      for (const RateSummary& s : summarize_rates(records, beta, d)) {
        std::vector<double> a, b;
        for (const auto& r : records)
          if (r.status == "ok" && r.method == s.method) {
            a.push_back(r.score_error);
            b.push_back(r.jacobian_error);
          }
        json row = {{"method", s.method},
                    {"slope", s.score.slope},
                    {"target", s.score.target_slope},
                    {"r2", s.score.r2},
                    {"jacobian_slope", s.jacobian.slope},
                    {"pass", s.score_band && s.jacobian_negative}};
        if (a.size() >= 10) {
          const AssociationReport as = association_check(a, b);
          row["spearman"] = as.spearman;
          row["association_pass"] = as.holds;
          ok = ok && as.holds;
        }
        ok = ok && s.score_band && s.jacobian_negative;
        out.push_back(row);
      }
      if (!rts_out.empty()) emit_plotdata(records, rts_out, beta, d);
      std::cout << out.dump(2) << "\n";
      return ok ? kPass : kFail;
    }

    if (*ver) {
      VerifyReport rep;
      try {
        rep = run_verify(ver_suite, vo);
      } catch (const std::invalid_argument& e) {
        if (std::string(e.what()).starts_with("unknown verify suite")) throw UsageError(e.what());
        throw;
      }
      for (const auto& ch : rep.checks)
        std::cout << (ch.passed ? "PASS " : "FAIL ") << ch.name << ": " << ch.detail << "\n";
      std::cout << rep.suite << ": " << (rep.passed() ? "pass" : "FAIL") << " in " << rep.seconds << " s\n";
      if (!ver_out.empty()) write_file_atomic(ver_out, rep.csv);
      return rep.passed() ? kPass : kFail;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  }
  return kUsage;
}
