#include "helpers.hpp"
#include "scorelab/experiment.hpp"
#include "scorelab/verify.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

using namespace scorelab;
using nlohmann::json;

namespace {

json small_config(const std::string& method = "dsm") {
  json j = {
      {"generator", scorelab::testing::circle().to_json()},
      {"noise", {{"sigma", 0.4}, {"sigma_min", 0.3}}},
      {"method", method},
      {"arch", {{"widths", {2, 6, 2}}}},
      {"train", {{"epochs", 3}, {"batch_size", 32}, {"seed", 1}, {"monitor_every", 0}}},
      {"eval", {{"n_mc", 200}, {"seed", 3}, {"probe", 32}}},
      {"sweep", {{"n_values", {32, 64}}, {"seeds", {0, 1}}}},
  };
  if (method == "dsm") j["t"] = 0.5;
  return j;
}

std::vector<RunRecord> without_wall(std::vector<RunRecord> r) {
  for (auto& x : r) x.wall_ms = 0.0;
  return r;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("scorelab_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

RunRecord record(const std::string& method, Index n, std::uint64_t seed, double se, double je) {
  RunRecord r;
  r.run_id = "x";
  r.method = method;
  r.n = n;
  r.seed = seed;
  r.score_error = se;
  r.jacobian_error = je;
  return r;
}

}  // namespace

TEST_CASE("config parsing is strict") {
  CHECK_NOTHROW(ExperimentConfig::from_json(small_config()));
  json j = small_config();
  j["surprise"] = 1;
  CHECK_THROWS(ExperimentConfig::from_json(j));
  j = small_config();
  j["train"]["lr"] = 0.1;
  CHECK_THROWS(ExperimentConfig::from_json(j));
  j = small_config("ism");
  j["t"] = 0.5;
  CHECK_THROWS(ExperimentConfig::from_json(j));
  j = small_config();
  j.erase("t");
  CHECK_THROWS(ExperimentConfig::from_json(j));
  j = small_config();
  j["arch"]["widths"] = {3, 6, 3};
  CHECK_THROWS(ExperimentConfig::from_json(j));
}

TEST_CASE("config defaults and round trip") {
  json j = small_config("ism");
  j.erase("sweep");
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  CHECK(c.sweep.n_values == std::vector<Index>{256, 512, 1024, 2048, 4096, 8192});
  CHECK(c.sweep.seeds.size() == 5);
  CHECK(c.train.sigma_min == 0.3);
  CHECK(!c.time());
  const ExperimentConfig r = ExperimentConfig::from_json(c.to_json());
  CHECK(r.to_json() == c.to_json());
}

TEST_CASE("null budget entries mean unbounded") {
  json j = small_config("ism");
  j["train"]["budget"] = {{"C0", nullptr}, {"C1", 0.5}};
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  CHECK(std::isinf(c.train.budget.C0));
  CHECK(c.train.budget.C1 == 0.5);
  CHECK(ExperimentConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("run ids hash the config, n and seed") {
  const ExperimentConfig c = ExperimentConfig::from_json(small_config());
  const std::string id = make_run_id(c, 32, 0);
  CHECK(id.size() == 16);
  CHECK(id == make_run_id(c, 32, 0));
  CHECK(id != make_run_id(c, 64, 0));
  CHECK(id != make_run_id(c, 32, 1));
  ExperimentConfig d = c;
  d.output_dir = "/somewhere/else";
  CHECK(id == make_run_id(d, 32, 0));
  d.train.adam.step = 0.5;
  CHECK(id != make_run_id(d, 32, 0));
}

TEST_CASE("empty sweep gives no records") {
  json j = small_config();
  j["sweep"] = {{"n_values", json::array()}, {"seeds", {0}}};
  CHECK(run_sweep(ExperimentConfig::from_json(j)).empty());
}

TEST_CASE("sweep cardinality, order and determinism across thread counts") {
  const ExperimentConfig c = ExperimentConfig::from_json(small_config());
  const auto a = run_sweep(c, 1);
  REQUIRE(a.size() == 4);
  CHECK(a[0].n == 32);
  CHECK(a[1].seed == 1);
  CHECK(a[3].n == 64);
  for (const auto& r : a) {
    CHECK(r.status == "ok");
    CHECK(r.score_error > 0.0);
  }
  const auto b = run_sweep(c, 2);
  CHECK(run_records_to_csv(without_wall(a)) == run_records_to_csv(without_wall(b)));
}

TEST_CASE("sweep writes its CSV atomically") {
  ExperimentConfig c = ExperimentConfig::from_json(small_config("ism"));
  const auto dir = temp_dir("sweep");
  c.output_dir = dir.string();
  int seen = 0;
  const auto recs = run_sweep(c, 1, [&](const RunRecord&) { ++seen; });
  CHECK(seen == 4);
  CHECK(std::filesystem::exists(dir / "runs.csv"));
  CHECK_FALSE(std::filesystem::exists(dir / "runs.csv.partial"));
  const auto back = run_records_from_csv(read_file((dir / "runs.csv").string()));
  CHECK(run_records_to_csv(back) == run_records_to_csv(recs));
  std::filesystem::remove_all(dir);
}

TEST_CASE("a failing run is recorded and the sweep continues") {
  json j = small_config("ism");
  j["train"]["step"] = 1e6;
  j["train"]["epochs"] = 20;
  const auto recs = run_sweep(ExperimentConfig::from_json(j));
  REQUIRE(recs.size() == 4);
  int errors = 0;
  for (const auto& r : recs) errors += r.status.starts_with("error");
  CHECK(errors > 0);
  // error rows survive the CSV round trip
  CHECK(run_records_to_csv(run_records_from_csv(run_records_to_csv(recs))) == run_records_to_csv(recs));
}

TEST_CASE("CSV rows round trip exactly") {
  RunRecord r = record("ism", 256, 3, 0.1 + 1e-17, 2.0 / 3.0);
  r.C0_hat = 1.0 / 7.0;
  r.S_effective = 42;
  r.status = "error: something, with a comma";
  const auto back = run_records_from_csv(run_records_to_csv({r}));
  REQUIRE(back.size() == 1);
  CHECK(back[0].score_error == r.score_error);
  CHECK(back[0].jacobian_error == r.jacobian_error);
  CHECK(back[0].C0_hat == r.C0_hat);
  CHECK(back[0].S_effective == 42);
  CHECK(run_record_csv_row(back[0]) == run_record_csv_row(r));
  CHECK_THROWS(run_records_from_csv("not,a,header\n"));
}

TEST_CASE("aggregation by n") {
  std::vector<RunRecord> recs{record("ism", 100, 0, 1.0, 5.0), record("ism", 100, 1, 3.0, 5.0),
                              record("ism", 100, 2, 2.0, 5.0)};
  const auto pts = aggregate_by_n(recs, false);
  REQUIRE(pts.size() == 1);
  CHECK(pts[0].median == 2.0);
  CHECK(pts[0].q25 == 1.5);
  CHECK(pts[0].q75 == 2.5);
  recs[1].status = "error: x";
  CHECK(aggregate_by_n(recs, false)[0].median == 1.5);
}

TEST_CASE("plot data of a single record") {
  const auto dir = temp_dir("single");
  emit_plotdata({record("dsm", 64, 0, 0.5, 2.0)}, dir.string(), 2.0, 1);
  const std::string csv = read_file((dir / "rate_curve.csv").string());
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK_THROWS(emit_plotdata({}, dir.string(), 2.0, 1));
  std::filesystem::remove_all(dir);
}

TEST_CASE("plot data feeds back into the rate fit") {
  std::vector<RunRecord> recs;
  for (Index n : {256, 512, 1024, 2048}) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      const double e = 4.0 * std::pow(static_cast<double>(n), -0.6) * (1.0 + 0.1 * s);
      recs.push_back(record("ism", n, s, e, 10 * e));
    }
  }
  const auto dir = temp_dir("fit");
  emit_plotdata(recs, dir.string(), 2.0, 1);
  const json fit = json::parse(read_file((dir / "rate_fit.json").string()));
  const auto sums = summarize_rates(recs, 2.0, 1);
  REQUIRE(sums.size() == 1);
  CHECK(std::abs(sums[0].score.slope + 0.6) < 1e-12);
  CHECK(sums[0].score_band);
  CHECK(sums[0].jacobian_negative);
  CHECK(std::abs(fit.at("ism").at("score").at("slope").get<double>() + 0.6) < 1e-12);
  // the curve file alone reproduces the fit
  const std::string csv = read_file((dir / "rate_curve.csv").string());
  std::vector<std::pair<double, double>> pts;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    pts.emplace_back(std::stod(f[1]), std::stod(f[2]));
  }
  CHECK(std::abs(fit_rate(pts, 2.0, 1).slope + 0.6) < 1e-12);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training curve CSV") {
  TrainHistory h;
  h.risk = {1.0, 0.5};
  h.grad_norm = {2.0, 1.0};
  h.decoded = {3.0, 3.1};
  h.C0_hat = h.C1_hat = h.Calpha_hat = {0.0, 0.0};
  const std::string csv = training_curve_csv(h);
  CHECK(csv.starts_with("epoch,risk"));
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("verification suites by name") {
  CHECK_THROWS_AS(run_verify("bogus", {}), std::invalid_argument);
  VerifyOptions o;
  o.trials = 100;
  CHECK(run_verify("gn", o).passed());
  o = {};
  o.grid = 20001;
  o.trials = 10;
  CHECK(run_verify("gelu", o).passed());
  o = {};
  o.trials = 2;
  o.n_mc = 20000;
  o.dsm = false;
  CHECK(run_verify("identities", o).passed());
  o.negate_divergence = true;
  CHECK_FALSE(run_verify("identities", o).passed());
}
