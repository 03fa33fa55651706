#pragma once

#include "scorelab/core.hpp"
#include "scorelab/evaluation.hpp"
#include "scorelab/generators.hpp"
#include "scorelab/training.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace scorelab {

struct EvalConfig {
  Index n_mc = 4000;
  std::uint64_t seed = 7;
  int alpha = 2;
  Index probe = 256;
};

struct SweepConfig {
  std::vector<Index> n_values;
  std::vector<std::uint64_t> seeds;
};

/// Everything a sweep needs. Parsed strictly: unknown keys are errors.
struct ExperimentConfig {
  GeneratorSpec generator = GeneratorSpec::constant(Vector::Zero(1));
  NoiseConfig noise;
  TrainConfig train;  // method, t, sigma_min and widths are filled from the top level
  EvalConfig eval;
  SweepConfig sweep;
  std::string output_dir;

  Method method() const { return train.method; }
  std::optional<double> time() const {
    return train.method == Method::dsm ? std::optional<double>(train.t) : std::nullopt;
  }

  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);
  nlohmann::json to_json() const;
};

struct RunRecord {
  std::string run_id;
  std::string method;
  Index n = 0;
  std::uint64_t seed = 0;
  std::string status = "ok";
  double score_error = 0.0;
  double score_error_se = 0.0;
  double jacobian_error = 0.0;
  double jacobian_error_se = 0.0;
  double final_risk = 0.0;
  double grad_norm = 0.0;
  double decoded = 0.0;
  double C0_hat = 0.0;
  double C1_hat = 0.0;
  double Calpha_hat = 0.0;
  int violations = 0;
  Index S_effective = 0;
  double B_effective = 0.0;
  double wall_ms = 0.0;
};

/// 64-bit FNV-1a of the canonical config, n and seed, as 16 hex digits.
std::string make_run_id(const ExperimentConfig& config, Index n, std::uint64_t seed);

/// Seeds a single run derives from the sweep seed: the data seed does not
/// depend on n, so smaller samples are prefixes of larger ones.
std::uint64_t data_seed(std::uint64_t seed);
std::uint64_t init_seed(std::uint64_t seed);

/// The training sample of run (n, seed).
DataBatch sample_training_data(const ExperimentConfig& config, Index n, std::uint64_t seed);

/// Trains run (n, seed) exactly as run_single does. With an oracle the
/// history also tracks the score error.
TrainResult train_single(const ExperimentConfig& config, Index n, std::uint64_t seed,
                         const OracleContext* oracle = nullptr);

/// Samples data, trains, evaluates against the oracle. Failures come back as
/// a record with status "error: ...".
RunRecord run_single(const ExperimentConfig& config, const OracleContext& ctx, Index n,
                     std::uint64_t seed);

/// All (n, seed) runs on a pool of `threads` workers; output sorted by
/// (n, seed) in config order. With an output directory, finished rows are
/// appended to runs.csv.partial as they complete and runs.csv is written by
/// an atomic rename at the end.
std::vector<RunRecord> run_sweep(const ExperimentConfig& config, int threads = 1,
                                 const std::function<void(const RunRecord&)>& on_done = {});

std::string run_records_csv_header();
std::string run_record_csv_row(const RunRecord& r);
std::string run_records_to_csv(const std::vector<RunRecord>& records);
std::vector<RunRecord> run_records_from_csv(const std::string& text);

/// Writes text to path through a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& text);
std::string read_file(const std::string& path);

struct RatePoint {
  Index n = 0;
  double median = 0.0;
  double q25 = 0.0;
  double q75 = 0.0;
};

/// Median and quartiles of one error column per n (status "ok" rows only).
std::vector<RatePoint> aggregate_by_n(const std::vector<RunRecord>& records, bool jacobian);

struct RateSummary {
  std::string method;
  RateFit score;
  RateFit jacobian;
  std::vector<RatePoint> score_points;
  std::vector<RatePoint> jacobian_points;
  bool score_band = false;
  bool jacobian_negative = false;
};

/// Per-method fits of median error against n.
std::vector<RateSummary> summarize_rates(const std::vector<RunRecord>& records, double beta, int d);

/// Rate-curve data: rate_curve.csv with one row per (method, n) holding medians
/// and quartiles of both errors, and rate_fit.json with the fitted lines.
/// Returns the files written.
std::vector<std::string> emit_plotdata(const std::vector<RunRecord>& records, const std::string& dir,
                                       double beta, int d);

/// Per-epoch training history as CSV.
std::string training_curve_csv(const TrainHistory& history);

}  // namespace scorelab
