#include "scorelab/experiment.hpp"

#include "scorelab/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace scorelab {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    require(known, "unknown key '" + item.key() + "' in " + where);
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

// null means "no budget"
double budget_value(const json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (j.at(key).is_null()) return std::numeric_limits<double>::infinity();
  return j.at(key).get<double>();
}

json budget_to_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string sanitize(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, {"generator", "noise", "method", "t", "arch", "train", "eval", "sweep", "output_dir"},
             "experiment config");
  ExperimentConfig c;
  c.generator = GeneratorSpec::from_json(j.at("generator"));

  const auto& nz = j.at("noise");
  check_keys(nz, {"sigma", "sigma_min"}, "noise");
  const double sigma = nz.at("sigma").get<double>();
  c.noise = NoiseConfig::make(sigma, get_or(nz, "sigma_min", sigma));

  TrainConfig& tc = c.train;
  tc.method = method_from_string(j.at("method").get<std::string>());
  if (tc.method == Method::dsm) {
    require(j.contains("t"), "experiment config: DSM needs t");
    tc.t = j.at("t").get<double>();
  } else {
    require(!j.contains("t"), "experiment config: t is only meaningful for DSM");
  }
  tc.sigma_min = c.noise.sigma_min;

  const auto& arch = j.at("arch");
  check_keys(arch, {"widths", "family"}, "arch");
  tc.widths = arch.at("widths").get<std::vector<int>>();
  const auto family = get_or<std::string>(arch, "family", "gelu");
  require(family == "gelu" || family == "constant", "arch.family must be gelu or constant");
  tc.family = family == "gelu" ? ModelFamily::gelu : ModelFamily::constant;
  require(!tc.widths.empty() && tc.widths.front() == c.generator.ambient_dim(),
          "arch.widths must start and end with the ambient dimension D");

  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, {"step", "beta1", "beta2", "eps", "epochs", "steps", "batch_size", "seed", "init_raw",
                   "penalty_weight", "budget", "monitor_every", "monitor_alpha", "monitor_probe",
                   "grad_check"},
               "train");
    tc.adam.step = get_or(t, "step", tc.adam.step);
    tc.adam.beta1 = get_or(t, "beta1", tc.adam.beta1);
    tc.adam.beta2 = get_or(t, "beta2", tc.adam.beta2);
    tc.adam.eps = get_or(t, "eps", tc.adam.eps);
    tc.epochs = get_or(t, "epochs", tc.epochs);
    if (t.contains("steps")) tc.target_steps = t.at("steps").get<long>();
    tc.batch_size = get_or<Index>(t, "batch_size", tc.batch_size);
    tc.seed = get_or<std::uint64_t>(t, "seed", tc.seed);
    tc.init_raw = get_or(t, "init_raw", tc.init_raw);
    tc.penalty_weight = get_or(t, "penalty_weight", tc.penalty_weight);
    if (t.contains("budget")) {
      const auto& b = t.at("budget");
      check_keys(b, {"C0", "C1", "Calpha"}, "train.budget");
      tc.budget.C0 = budget_value(b, "C0", tc.budget.C0);
      tc.budget.C1 = budget_value(b, "C1", tc.budget.C1);
      tc.budget.Calpha = budget_value(b, "Calpha", tc.budget.Calpha);
    }
    tc.monitor_every = get_or(t, "monitor_every", tc.monitor_every);
    tc.monitor_alpha = get_or(t, "monitor_alpha", tc.monitor_alpha);
    tc.monitor_probe = get_or<Index>(t, "monitor_probe", tc.monitor_probe);
    tc.grad_check = get_or(t, "grad_check", tc.grad_check);
  }
  tc.validate();

  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, {"n_mc", "seed", "alpha", "probe"}, "eval");
    c.eval.n_mc = get_or<Index>(e, "n_mc", c.eval.n_mc);
    c.eval.seed = get_or<std::uint64_t>(e, "seed", c.eval.seed);
    c.eval.alpha = get_or(e, "alpha", c.eval.alpha);
    c.eval.probe = get_or<Index>(e, "probe", c.eval.probe);
  }
  require(c.eval.n_mc >= 2, "eval.n_mc must be at least 2");
  require(c.eval.alpha >= 1 && c.eval.alpha <= 3, "eval.alpha must be 1, 2 or 3");
  require(c.eval.probe >= 1, "eval.probe must be positive");

  c.sweep.n_values = {256, 512, 1024, 2048, 4096, 8192};
  c.sweep.seeds = {0, 1, 2, 3, 4};
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    check_keys(s, {"n_values", "seeds"}, "sweep");
    if (s.contains("n_values")) c.sweep.n_values = s.at("n_values").get<std::vector<Index>>();
    if (s.contains("seeds")) c.sweep.seeds = s.at("seeds").get<std::vector<std::uint64_t>>();
  }
  for (Index n : c.sweep.n_values) require(n >= 1, "sweep.n_values must be positive");

  c.output_dir = get_or<std::string>(j, "output_dir", "");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("cannot parse " + path + ": " + e.what());
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  const TrainConfig& tc = train;
  json t = {{"step", tc.adam.step},
            {"beta1", tc.adam.beta1},
            {"beta2", tc.adam.beta2},
            {"eps", tc.adam.eps},
            {"epochs", tc.epochs},
            {"batch_size", tc.batch_size},
            {"seed", tc.seed},
            {"init_raw", tc.init_raw},
            {"penalty_weight", tc.penalty_weight},
            {"budget",
             {{"C0", budget_to_json(tc.budget.C0)},
              {"C1", budget_to_json(tc.budget.C1)},
              {"Calpha", budget_to_json(tc.budget.Calpha)}}},
            {"monitor_every", tc.monitor_every},
            {"monitor_alpha", tc.monitor_alpha},
            {"monitor_probe", tc.monitor_probe},
            {"grad_check", tc.grad_check}};
  if (tc.target_steps) t["steps"] = *tc.target_steps;
  json j = {{"generator", generator.to_json()},
            {"noise", {{"sigma", noise.sigma}, {"sigma_min", noise.sigma_min}}},
            {"method", to_string(tc.method)},
            {"arch", {{"widths", tc.widths}, {"family", tc.family == ModelFamily::gelu ? "gelu" : "constant"}}},
            {"train", t},
            {"eval", {{"n_mc", eval.n_mc}, {"seed", eval.seed}, {"alpha", eval.alpha}, {"probe", eval.probe}}},
            {"sweep", {{"n_values", sweep.n_values}, {"seeds", sweep.seeds}}},
            {"output_dir", output_dir}};
  if (tc.method == Method::dsm) j["t"] = tc.t;
  return j;
}

std::string make_run_id(const ExperimentConfig& config, Index n, std::uint64_t seed) {
  json j = config.to_json();
  // the id names a run, not where its outputs land or which sweep it came from
  j.erase("output_dir");
  j.erase("sweep");
  const std::string text = j.dump() + "|" + std::to_string(n) + "|" + std::to_string(seed);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t data_seed(std::uint64_t seed) { return mix64(seed ^ 0x64617461ULL); }
std::uint64_t init_seed(std::uint64_t seed) { return mix64(seed ^ 0x696e6974ULL); }

DataBatch sample_training_data(const ExperimentConfig& config, Index n, std::uint64_t seed) {
  if (config.method() == Method::ism) return sample_noisy(config.generator, config.noise, n, data_seed(seed));
  return sample_ou_pair(config.generator, config.noise, config.train.t, n, data_seed(seed));
}

TrainResult train_single(const ExperimentConfig& config, Index n, std::uint64_t seed,
                         const OracleContext* oracle) {
  TrainConfig tc = config.train;
  tc.seed = mix64(config.train.seed ^ init_seed(seed));
  return train_erm(tc, sample_training_data(config, n, seed), oracle);
}

RunRecord run_single(const ExperimentConfig& config, const OracleContext& ctx, Index n,
                     std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  RunRecord r;
  r.run_id = make_run_id(config, n, seed);
  r.method = to_string(config.method());
  r.n = n;
  r.seed = seed;
  try {
    const TrainResult res = train_single(config, n, seed);
    const TrainConfig& tc = config.train;
    const auto [se, je] = score_and_jacobian_error(res.model, ctx, config.eval.n_mc, config.eval.seed);
    r.score_error = se.mean;
    r.score_error_se = se.se;
    r.jacobian_error = je.mean;
    r.jacobian_error_se = je.se;
    r.final_risk = res.history.best_risk;
    r.grad_norm = res.history.grad_norm.empty() ? 0.0 : res.history.grad_norm.back();
    r.decoded = res.model.decoded();
    const Matrix probe = sample_marginal(ctx, config.eval.probe, mix64(config.eval.seed ^ 0x70726f6265ULL));
    const MonitorReport mon = sobolev_monitor(res.model, probe, config.eval.alpha, tc.budget);
    r.C0_hat = mon.C0_hat;
    r.C1_hat = mon.C1_hat;
    r.Calpha_hat = mon.Calpha_hat;
    r.violations = mon.violations;
    r.S_effective = res.model.net().nonzero_count();
    r.B_effective = res.model.net().max_abs();
  } catch (const std::exception& e) {
    r.status = "error: " + sanitize(e.what());
  }
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& config, int threads,
                                 const std::function<void(const RunRecord&)>& on_done) {
  std::vector<std::pair<Index, std::uint64_t>> jobs;
  for (Index n : config.sweep.n_values)
    for (std::uint64_t s : config.sweep.seeds) jobs.emplace_back(n, s);
  std::vector<RunRecord> out(jobs.size());
  if (jobs.empty()) {
    if (!config.output_dir.empty()) {
      std::filesystem::create_directories(config.output_dir);
      write_file_atomic((std::filesystem::path(config.output_dir) / "runs.csv").string(),
                        run_records_to_csv(out));
    }
    return out;
  }

  const OracleContext ctx = make_context(config.generator, config.noise, config.time());

  std::ofstream partial;
  std::string partial_path;
  if (!config.output_dir.empty()) {
    std::filesystem::create_directories(config.output_dir);
    partial_path = (std::filesystem::path(config.output_dir) / "runs.csv.partial").string();
    partial.open(partial_path, std::ios::trunc);
    partial << run_records_csv_header() << '\n' << std::flush;
  }

  std::mutex writer;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= jobs.size()) return;
      RunRecord r = run_single(config, ctx, jobs[k].first, jobs[k].second);
      std::lock_guard<std::mutex> lock(writer);
      if (partial.is_open()) partial << run_record_csv_row(r) << '\n' << std::flush;
      if (on_done) on_done(r);
      out[k] = std::move(r);
    }
  };
  const int nt = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
  if (nt == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nt; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (!config.output_dir.empty()) {
    partial.close();
    write_file_atomic((std::filesystem::path(config.output_dir) / "runs.csv").string(),
                      run_records_to_csv(out));
    std::filesystem::remove(partial_path);
  }
  return out;
}

std::string run_records_csv_header() {
  return "run_id,method,n,seed,status,score_error,score_error_se,jacobian_error,jacobian_error_se,"
         "final_risk,grad_norm,decoded,C0_hat,C1_hat,Calpha_hat,violations,S_effective,B_effective,wall_ms";
}

std::string run_record_csv_row(const RunRecord& r) {
  std::ostringstream os;
  os << r.run_id << ',' << r.method << ',' << r.n << ',' << r.seed << ',' << sanitize(r.status) << ','
     << fmt(r.score_error) << ',' << fmt(r.score_error_se) << ',' << fmt(r.jacobian_error) << ','
     << fmt(r.jacobian_error_se) << ',' << fmt(r.final_risk) << ',' << fmt(r.grad_norm) << ','
     << fmt(r.decoded) << ',' << fmt(r.C0_hat) << ',' << fmt(r.C1_hat) << ',' << fmt(r.Calpha_hat) << ','
     << r.violations << ',' << r.S_effective << ',' << fmt(r.B_effective) << ',' << fmt(r.wall_ms);
  return os.str();
}

std::string run_records_to_csv(const std::vector<RunRecord>& records) {
  std::string s = run_records_csv_header() + "\n";
  for (const auto& r : records) s += run_record_csv_row(r) + "\n";
  return s;
}

std::vector<RunRecord> run_records_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "run CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == run_records_csv_header(), "run CSV header does not match the record schema");
  std::vector<RunRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    require(f.size() == 19, "run CSV line " + std::to_string(lineno) + " has " + std::to_string(f.size()) +
                                " fields, expected 19");
    try {
      RunRecord r;
      r.run_id = f[0];
      r.method = f[1];
      r.n = std::stol(f[2]);
      r.seed = std::stoull(f[3]);
      r.status = f[4];
      r.score_error = std::stod(f[5]);
      r.score_error_se = std::stod(f[6]);
      r.jacobian_error = std::stod(f[7]);
      r.jacobian_error_se = std::stod(f[8]);
      r.final_risk = std::stod(f[9]);
      r.grad_norm = std::stod(f[10]);
      r.decoded = std::stod(f[11]);
      r.C0_hat = std::stod(f[12]);
      r.C1_hat = std::stod(f[13]);
      r.Calpha_hat = std::stod(f[14]);
      r.violations = std::stoi(f[15]);
      r.S_effective = std::stol(f[16]);
      r.B_effective = std::stod(f[17]);
      r.wall_ms = std::stod(f[18]);
      out.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw std::invalid_argument("run CSV line " + std::to_string(lineno) + " has a malformed number");
    }
  }
  return out;
}

void write_file_atomic(const std::string& path, const std::string& text) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    require(static_cast<bool>(f), "cannot write " + tmp);
    f << text;
    f.flush();
    require(static_cast<bool>(f), "write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(static_cast<bool>(f), "cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::vector<RatePoint> aggregate_by_n(const std::vector<RunRecord>& records, bool jacobian) {
  std::map<Index, std::vector<double>> by_n;
  for (const auto& r : records)
    if (r.status == "ok") by_n[r.n].push_back(jacobian ? r.jacobian_error : r.score_error);
  std::vector<RatePoint> out;
  for (const auto& [n, v] : by_n) out.push_back({n, quantile(v, 0.5), quantile(v, 0.25), quantile(v, 0.75)});
  return out;
}

std::vector<RateSummary> summarize_rates(const std::vector<RunRecord>& records, double beta, int d) {
  std::vector<std::string> methods;
  for (const auto& r : records)
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
  std::vector<RateSummary> out;
  for (const auto& m : methods) {
    std::vector<RunRecord> sub;
    std::copy_if(records.begin(), records.end(), std::back_inserter(sub),
                 [&](const RunRecord& r) { return r.method == m; });
    RateSummary s;
    s.method = m;
    s.score_points = aggregate_by_n(sub, false);
    s.jacobian_points = aggregate_by_n(sub, true);
    auto pts = [](const std::vector<RatePoint>& p) {
      std::vector<std::pair<double, double>> v;
      for (const auto& x : p) v.emplace_back(static_cast<double>(x.n), x.median);
      return v;
    };
    auto fittable = [](const std::vector<RatePoint>& p) {
      return p.size() >= 3 && std::all_of(p.begin(), p.end(), [](const RatePoint& x) { return x.median > 0.0; });
    };
    if (fittable(s.score_points)) {
      s.score = fit_rate(pts(s.score_points), beta, d);
      s.score_band = rate_band_holds(s.score);
    }
    if (fittable(s.jacobian_points)) {
      s.jacobian = fit_rate(pts(s.jacobian_points), beta, d);
      s.jacobian_negative = s.jacobian.slope < 0.0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::string> emit_plotdata(const std::vector<RunRecord>& records, const std::string& dir,
                                       double beta, int d) {
  require(!records.empty(), "emit_plotdata: no records");
  std::filesystem::create_directories(dir);
  const auto summaries = summarize_rates(records, beta, d);
  std::string csv = "method,n,score_median,score_q25,score_q75,jacobian_median,jacobian_q25,jacobian_q75\n";
  json fits = json::object();
  for (const auto& s : summaries) {
    for (std::size_t i = 0; i < s.score_points.size(); ++i) {
      const auto& a = s.score_points[i];
      const auto& b = s.jacobian_points[i];
      csv += s.method + "," + std::to_string(a.n) + "," + fmt(a.median) + "," + fmt(a.q25) + "," + fmt(a.q75) +
             "," + fmt(b.median) + "," + fmt(b.q25) + "," + fmt(b.q75) + "\n";
    }
    auto fit_json = [](const RateFit& f) {
      return json{{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}, {"target", f.target_slope}};
    };
    fits[s.method] = {{"score", fit_json(s.score)},
                      {"jacobian", fit_json(s.jacobian)},
                      {"score_band", s.score_band},
                      {"jacobian_negative", s.jacobian_negative}};
  }
  const auto csv_path = (std::filesystem::path(dir) / "rate_curve.csv").string();
  const auto json_path = (std::filesystem::path(dir) / "rate_fit.json").string();
  write_file_atomic(csv_path, csv);
  write_file_atomic(json_path, fits.dump(2) + "\n");
  return {csv_path, json_path};
}

std::string training_curve_csv(const TrainHistory& h) {
  const bool with_err = !h.score_error.empty();
  std::string s = "epoch,risk,grad_norm,decoded,C0_hat,C1_hat,Calpha_hat";
  s += with_err ? ",score_error\n" : "\n";
  for (std::size_t e = 0; e < h.risk.size(); ++e) {
    s += std::to_string(e) + "," + fmt(h.risk[e]) + "," + fmt(h.grad_norm[e]) + "," + fmt(h.decoded[e]) + "," +
         fmt(h.C0_hat[e]) + "," + fmt(h.C1_hat[e]) + "," + fmt(h.Calpha_hat[e]);
    if (with_err) s += "," + fmt(h.score_error[e]);
    s += "\n";
  }
  return s;
}

}  // namespace scorelab
