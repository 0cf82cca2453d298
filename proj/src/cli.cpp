#include "eqflow/cli.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "eqflow/verify.hpp"

namespace eqflow::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// --- Config access -------------------------------------------------------------------------

/// Rejects keys outside `allowed` so typos surface as errors instead of defaults.
void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      throw ConfigError(where + ": unknown key '" + key + "'");
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T get(const json& j, const char* key, const T& fallback, const std::string& where) {
  return j.contains(key) ? get<T>(j, key, where) : fallback;
}

std::vector<std::size_t> get_dims(const json& j, const std::string& where, std::vector<std::size_t> fallback = {}) {
  auto dims = get<std::vector<std::size_t>>(j, "dims", fallback, where);
  if (dims.empty() || std::find(dims.begin(), dims.end(), 0u) != dims.end())
    throw ConfigError(where + ": dims must be a non-empty list of positive sizes");
  return dims;
}

/// Wraps library parse errors (unknown names, bad records) as config errors.
template <class F>
auto parse_field(const std::string& where, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + ": " + e.what());
  } catch (const std::out_of_range& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

Family get_family(const json& j, const std::string& where) {
  const auto name = get<std::string>(j, "family", where);
  return parse_field(where, [&] { return family_from_string(name); });
}

PermGroup get_group(const json& j, const std::string& where, std::size_t n) {
  const auto record = get<std::string>(j, "group", where);
  PermGroup g = parse_field(where, [&] { return parse_group(record); });
  if (g.degree() != n) throw ConfigError(where + ": group degree does not match dims");
  return g;
}

// --- Output helpers ------------------------------------------------------------------------

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

/// Pretty JSON; the timestamp field, when enabled, is the only varying content.
void write_summary(const fs::path& path, json summary, const ExperimentSpec& spec) {
  if (spec.timestamp) summary["generated"] = utc_timestamp();
  write_file(path, summary.dump(2) + "\n");
}

std::string csv_header(const ExperimentSpec& spec) {
  return spec.timestamp ? "# generated " + utc_timestamp() + "\n" : "";
}

fs::path out_dir(const ExperimentSpec& spec) {
  if (spec.out_dir.empty()) throw ConfigError("--out is required");
  return spec.out_dir;
}

std::uint64_t run_seed(const json& cfg, const ExperimentSpec& spec) {
  return spec.seed.value_or(get<std::uint64_t>(cfg, "seed", 0, "config"));
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, const char* spec = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

}  // namespace

nlohmann::json load_config(const std::string& path, const std::string& command) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  json cfg;
  try {
    cfg = json::parse(f, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError("parse error in '" + path + "': " + e.what());
  }
  if (!cfg.is_object()) throw ConfigError(path + ": top level must be an object");
  const int version = get<int>(cfg, "schema_version", path);
  if (version != schema_version)
    throw ConfigError(path + ": unsupported schema_version " + std::to_string(version));
  const auto declared = get<std::string>(cfg, "command", path);
  if (!command.empty() && declared != command)
    throw ConfigError(path + ": config is for '" + declared + "', not '" + command + "'");
  return cfg;
}

// --- verify --------------------------------------------------------------------------------

namespace {

struct CheckTask {
  std::string label;
  std::optional<Verdict> expected;
  std::function<VerificationReport()> run;
};

SearchOptions search_options(const json& c, const std::string& where) {
  SearchOptions o;
  o.draws = get<std::size_t>(c, "draws", o.draws, where);
  o.margin = get<double>(c, "margin", o.margin, where);
  o.param_bound = get<double>(c, "param_bound", o.param_bound, where);
  if (c.contains("activation")) {
    const auto a = get<std::string>(c, "activation", where);
    o.activation = parse_field(where, [&] { return activation_from_string(a); });
  }
  return o;
}

/// Validates one suite entry and binds it to a checker; nothing runs here.
CheckTask make_task(const json& c, std::size_t index, std::uint64_t suite_seed) {
  const std::string where = "checks[" + std::to_string(index) + "]";
  const auto kind = get<std::string>(c, "check", where);
  const std::uint64_t seed = get<std::uint64_t>(c, "seed", derive_seed(suite_seed, index), where);
  CheckTask t;
  if (c.contains("expect")) {
    const auto e = get<std::string>(c, "expect", where);
    t.expected = parse_field(where, [&] { return verdict_from_string(e); });
  }

  if (kind == "family_equivariance") {
    require_keys(c, {"check", "seed", "expect", "family", "dims", "samples", "layer_tol", "flow_tol"}, where);
    const Family f = get_family(c, where);
    const auto dims = get_dims(c, where);
    const auto samples = get<std::size_t>(c, "samples", 200, where);
    const double lt = get<double>(c, "layer_tol", 1e-12, where), ft = get<double>(c, "flow_tol", 1e-10, where);
    parse_field(where, [&] { return ControlLayer(f, dims, Vector(param_count(f, dims), 0.0)).degree(); });
    t.label = kind + " " + to_string(f) + " " + format_dims(dims);
    t.run = [=] { return check_family_equivariance(f, dims, samples, seed, lt, ft); };
  } else if (kind == "flow_gradient") {
    require_keys(c, {"check", "seed", "expect", "family", "dims", "instances", "step", "tol"}, where);
    const Family f = get_family(c, where);
    const auto dims = get_dims(c, where);
    const auto instances = get<std::size_t>(c, "instances", 100, where);
    const double step = get<double>(c, "step", 1e-5, where), tol = get<double>(c, "tol", 1e-5, where);
    parse_field(where, [&] { return ControlLayer(f, dims, Vector(param_count(f, dims), 0.0)).degree(); });
    t.label = kind + " " + to_string(f) + " " + format_dims(dims);
    t.run = [=] { return check_flow_gradient(f, dims, instances, seed, step, tol); };
  } else if (kind == "group_algebra") {
    require_keys(c, {"check", "seed", "expect", "group", "partition_samples"}, where);
    const auto record = get<std::string>(c, "group", where);
    const PermGroup g = parse_field(where, [&] { return parse_group(record); });
    if (g.degree() > max_transversal_degree) throw ConfigError(where + ": degree too large for transversals");
    const auto samples = get<std::size_t>(c, "partition_samples", 10000, where);
    t.label = kind + " " + record;
    t.run = [=] { return check_group_algebra(g, samples, seed); };
  } else if (kind == "invariance") {
    require_keys(c, {"check", "seed", "expect", "target", "dims", "group", "samples", "tol"}, where);
    const auto tag = get<std::string>(c, "target", where);
    const auto dims = get_dims(c, where);
    if (!register_targets().contains(tag)) throw ConfigError(where + ": unknown target '" + tag + "'");
    const TargetFunction target = parse_field(where, [&] { return register_targets().make(tag, dims); });
    const PermGroup g = get_group(c, where, product_of(dims));
    const auto samples = get<std::size_t>(c, "samples", 200, where);
    const double tol = get<double>(c, "tol", 1e-12, where);
    t.label = kind + " " + tag + " " + g.descriptor();
    t.run = [=] { return check_invariance(target.fn, g, samples, tol, seed); };
  } else if (kind == "perturbation" || kind == "resolves") {
    require_keys(c, {"check", "seed", "expect", "family", "dims", "group", "pairs", "draws", "margin", "param_bound",
                     "activation", "edge_draws"},
                 where);
    const Family f = get_family(c, where);
    const auto dims = get_dims(c, where);
    const PermGroup g = get_group(c, where, product_of(dims));
    if (g.degree() > max_transversal_degree) throw ConfigError(where + ": degree too large for transversals");
    const SearchOptions so = search_options(c, where);
    const auto pairs = get<std::size_t>(c, "pairs", 100, where);
    t.label = kind + " " + to_string(f) + " " + g.descriptor();
    if (kind == "perturbation") {
      t.run = [=] { return check_perturbation_property(f, dims, g, pairs, seed, so); };
    } else {
      ResolveOptions ro;
      ro.pairs = pairs;
      ro.perturbation = so;
      ro.edge_draws = get<std::size_t>(c, "edge_draws", ro.edge_draws, where);
      t.run = [=] { return check_resolves(f, dims, g, seed, ro); };
    }
  } else if (kind == "direct_connectivity") {
    require_keys(c, {"check", "seed", "expect", "family", "dims", "a", "b", "draws", "margin", "param_bound",
                     "activation"},
                 where);
    const Family f = get_family(c, where);
    const auto dims = get_dims(c, where);
    const std::size_t n = product_of(dims);
    const auto a_text = get<std::string>(c, "a", where), b_text = get<std::string>(c, "b", where);
    const Permutation a = parse_field(where, [&] { return Permutation::parse_cycles(n, a_text); });
    const Permutation b = parse_field(where, [&] { return Permutation::parse_cycles(n, b_text); });
    const Permutation diff = compose(inverse(b), a);
    std::size_t moved = 0;
    for (std::size_t i = 0; i < n; ++i) moved += diff.image0(i) != i;
    if (moved != 2) throw ConfigError(where + ": a and b must differ by a transposition");
    const SearchOptions so = search_options(c, where);
    t.label = kind + " " + to_string(f) + " " + a.to_cycles() + " " + b.to_cycles();
    t.run = [=] { return check_direct_connectivity(f, dims, a, b, seed, so); };
  } else if (kind == "counterexamples") {
    require_keys(c, {"check", "seed", "expect", "n", "schedules", "floor_models", "floor_test_samples",
                     "floor_train_iterations", "floor_margin"},
                 where);
    CounterexampleOptions o;
    o.n = get<std::size_t>(c, "n", o.n, where);
    o.schedules = get<std::size_t>(c, "schedules", o.schedules, where);
    o.floor_models = get<std::size_t>(c, "floor_models", o.floor_models, where);
    o.floor_test_samples = get<std::size_t>(c, "floor_test_samples", o.floor_test_samples, where);
    o.floor_train_iterations = get<std::size_t>(c, "floor_train_iterations", o.floor_train_iterations, where);
    o.floor_margin = get<double>(c, "floor_margin", o.floor_margin, where);
    if (o.n < 2) throw ConfigError(where + ": n must be at least 2");
    t.label = kind + " n=" + std::to_string(o.n);
    t.run = [=] { return check_counterexamples(seed, o); };
  } else {
    throw ConfigError(where + ": unknown check '" + kind + "'");
  }
  return t;
}

/// Runs tasks on up to `threads` workers; result slots are per task.
std::vector<VerificationReport> run_tasks(const std::vector<CheckTask>& tasks, std::size_t threads) {
  std::vector<VerificationReport> out(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next++) < tasks.size();) out[k] = tasks[k].run();
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < std::min(threads, tasks.size()); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return out;
}

}  // namespace

int cmd_verify(const ExperimentSpec& spec, std::ostream& out) {
  const json cfg = load_config(spec.config_path, "verify");
  require_keys(cfg, {"schema_version", "command", "name", "seed", "threads", "checks", "time_limit_seconds"}, "config");
  const fs::path dir = out_dir(spec);
  const std::uint64_t seed = run_seed(cfg, spec);
  const auto threads = std::max<std::size_t>(1, get<std::size_t>(cfg, "threads", 1, "config"));
  const auto checks = get<json>(cfg, "checks", "config");
  if (!checks.is_array() || checks.empty()) throw ConfigError("config.checks: expected a non-empty list");
  std::vector<CheckTask> tasks;
  for (std::size_t k = 0; k < checks.size(); ++k) tasks.push_back(make_task(checks[k], k, seed));

  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_tasks(tasks, threads);
  const double elapsed = elapsed_since(t0);

  std::string records;
  json rows = json::array();
  std::size_t unexpected = 0, inconclusive = 0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    const auto& r = reports[k];
    const Verdict expected = tasks[k].expected.value_or(Verdict::pass);
    // An expected fail only counts when it is a genuine fail.
    const bool as_expected = r.verdict == expected || (expected == Verdict::pass && r.verdict == Verdict::inconclusive);
    unexpected += !as_expected;
    inconclusive += r.verdict == Verdict::inconclusive;
    json rec = to_json(r);
    rec["label"] = tasks[k].label;
    rec["expected"] = to_string(expected);
    rec["as_expected"] = as_expected;
    records += rec.dump() + "\n";
    rows.push_back({{"label", tasks[k].label}, {"verdict", to_string(r.verdict)}, {"as_expected", as_expected}});
    out << (as_expected ? "ok   " : "FAIL ") << to_string(r.verdict) << "  " << tasks[k].label << "  worst="
        << fmt(r.worst_violation) << " violations=" << r.violations << "\n";
  }
  write_file(dir / "reports.jsonl", records);

  const double limit = get<double>(cfg, "time_limit_seconds", 0.0, "config");
  const bool in_time = limit <= 0.0 || elapsed < limit;
  json summary{{"command", "verify"},
               {"name", get<std::string>(cfg, "name", "verify", "config")},
               {"seed", seed},
               {"checks", rows},
               {"unexpected", unexpected},
               {"inconclusive", inconclusive}};
  json acceptance{{"criterion", summary["name"]}, {"passed", unexpected == 0 && in_time}};
  if (limit > 0.0) {
    acceptance["time_limit_seconds"] = limit;
    // Wall time varies between runs, so it is only recorded with timestamps on.
    if (spec.timestamp) acceptance["elapsed_seconds"] = elapsed;
  }
  summary["acceptance"] = acceptance;
  write_summary(dir / "summary.json", summary, spec);
  out << tasks.size() << " checks, " << unexpected << " unexpected, " << inconclusive << " inconclusive, "
      << fmt(elapsed, "%.1f") << " s\n";
  return unexpected == 0 && in_time ? exit_ok : exit_failure;
}

// --- train ---------------------------------------------------------------------------------

namespace {

ModelSpec model_spec(const json& m) {
  const std::string where = "config.model";
  require_keys(m, {"family", "dims", "layers", "activation", "terminal", "integrator", "steps_per_unit_time",
                   "init_lo", "init_hi"},
               where);
  ModelSpec s;
  s.family = get_family(m, where);
  s.dims = get_dims(m, where, {3});
  s.layers = get<std::size_t>(m, "layers", s.layers, where);
  const auto act = get<std::string>(m, "activation", to_string(s.activation), where);
  s.activation = parse_field(where, [&] { return activation_from_string(act); });
  const auto term = get<std::string>(m, "terminal", to_string(s.terminal), where);
  s.terminal = parse_field(where, [&] { return terminal_from_string(term); });
  const auto integ = get<std::string>(m, "integrator", to_string(s.integrator), where);
  s.integrator = parse_field(where, [&] { return integrator_from_string(integ); });
  s.steps_per_unit_time = get<std::size_t>(m, "steps_per_unit_time", s.steps_per_unit_time, where);
  s.init_lo = get<double>(m, "init_lo", s.init_lo, where);
  s.init_hi = get<double>(m, "init_hi", s.init_hi, where);
  if (s.layers == 0 || s.steps_per_unit_time == 0) throw ConfigError(where + ": layers and steps must be positive");
  if (!(s.init_lo <= s.init_hi)) throw ConfigError(where + ": init_lo must not exceed init_hi");
  parse_field(where, [&] { return ControlLayer(s.family, s.dims, Vector(param_count(s.family, s.dims), 0.0)).degree(); });
  return s;
}

TrainConfig train_config(const json& t) {
  const std::string where = "config.training";
  require_keys(t, {"kappa", "train_samples", "test_samples", "learning_rate", "momentum", "iterations", "log_every",
                   "threads", "divergence_threshold"},
               where);
  TrainConfig c;
  c.kappa = get<double>(t, "kappa", c.kappa, where);
  c.train_samples = get<std::size_t>(t, "train_samples", c.train_samples, where);
  c.test_samples = get<std::size_t>(t, "test_samples", c.test_samples, where);
  c.learning_rate = get<double>(t, "learning_rate", c.learning_rate, where);
  c.momentum = get<double>(t, "momentum", c.momentum, where);
  c.iterations = get<std::size_t>(t, "iterations", c.iterations, where);
  c.log_every = get<std::size_t>(t, "log_every", c.log_every, where);
  c.threads = get<std::size_t>(t, "threads", c.threads, where);
  c.divergence_threshold = get<double>(t, "divergence_threshold", c.divergence_threshold, where);
  parse_field(where, [&] {
    c.validate();
    return 0;
  });
  return c;
}

/// Relative error of the best G-invariant approximation: the group average is
/// the L2 projection, so the floor is sqrt(1 - |avg|^2 / |f|^2) on the samples.
double invariance_floor(const TargetFunction& target, const PermGroup& g, const Dataset& data) {
  const TargetFunction avg = group_average(target, g);
  double ff = 0.0, rr = 0.0;
  for (std::size_t k = 0; k < data.size(); ++k) {
    const double f = data.ys[k], a = avg(data.x(k));
    ff += f * f;
    rr += (f - a) * (f - a);
  }
  return ff > 0.0 ? std::sqrt(rr / ff) : 0.0;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

int cmd_train(const ExperimentSpec& spec, std::ostream& out) {
  const json cfg = load_config(spec.config_path, "train");
  require_keys(cfg, {"schema_version", "command", "name", "seed", "seeds", "target", "model", "training", "acceptance"},
               "config");
  const fs::path dir = out_dir(spec);
  const ModelSpec ms = model_spec(get<json>(cfg, "model", "config"));
  const TrainConfig base = train_config(get<json>(cfg, "training", json::object(), "config"));
  const auto tag = get<std::string>(cfg, "target", "config");
  if (!register_targets().contains(tag)) throw ConfigError("config.target: unknown target '" + tag + "'");
  const TargetFunction target = parse_field("config.target", [&] { return register_targets().make(tag, ms.dims); });

  std::vector<std::uint64_t> seeds;
  if (spec.seed) seeds = {*spec.seed};
  else if (cfg.contains("seeds")) seeds = get<std::vector<std::uint64_t>>(cfg, "seeds", "config");
  else seeds = {get<std::uint64_t>(cfg, "seed", 0, "config")};
  if (seeds.empty()) throw ConfigError("config.seeds: empty");

  // Acceptance: "approximation" wants median rel_err below a bound, "obstruction"
  // wants every seed at or above a floor.
  const json acc_cfg = get<json>(cfg, "acceptance", json::object(), "config");
  require_keys(acc_cfg, {"kind", "median_rel_err_below", "min_rel_err", "time_limit_seconds"}, "config.acceptance");
  const auto acc_kind = get<std::string>(acc_cfg, "kind", "none", "config.acceptance");
  if (acc_kind != "none" && acc_kind != "approximation" && acc_kind != "obstruction")
    throw ConfigError("config.acceptance.kind: expected none, approximation or obstruction");

  const Model probe = make_model(ms, 0);
  const PermGroup model_group = parse_group(probe.group);
  json runs = json::array();
  std::vector<double> rel_errs;
  bool diverged = false;
  const auto t_all = std::chrono::steady_clock::now();
  for (const std::uint64_t seed : seeds) {
    TrainConfig tc = base;
    tc.seed = seed;
    const fs::path run_dir = seeds.size() == 1 ? dir : dir / ("seed_" + std::to_string(seed));
    const auto t0 = std::chrono::steady_clock::now();
    json run{{"seed", seed}};
    try {
      const TrainResult res = train(make_model(ms, seed), target, tc);
      write_file(run_dir / "history.csv", csv_header(spec) + history_csv(res.history));
      run["final_train_mse"] = res.final_train.mse;
      run["final_test_mse"] = res.final_test.mse;
      run["rel_err"] = res.final_test.rel_err;
      run["schedule"] = res.model.schedule.serialize();
      rel_errs.push_back(res.final_test.rel_err);
      out << "seed " << seed << ": rel_err " << fmt(res.final_test.rel_err) << " (" << fmt(elapsed_since(t0), "%.1f")
          << " s)\n";
    } catch (const TrainingDiverged& e) {
      diverged = true;
      run["diverged_at"] = e.iteration();
      out << "seed " << seed << ": diverged at iteration " << e.iteration() << "\n";
    }
    if (spec.timestamp) run["elapsed_seconds"] = elapsed_since(t0);
    runs.push_back(run);
  }
  const double total = elapsed_since(t_all);

  const Dataset probe_set = sample_dataset(target, product_of(ms.dims), base.test_samples, base.kappa,
                                           derive_seed(seeds.front(), 2));
  json summary{{"command", "train"},
               {"name", get<std::string>(cfg, "name", "train", "config")},
               {"target", tag},
               {"family", to_string(ms.family)},
               {"dims", ms.dims},
               {"layers", ms.layers},
               {"model_group", probe.group},
               {"target_group", target.group},
               {"invariance_floor_rel_err", invariance_floor(target, model_group, probe_set)},
               {"runs", runs},
               {"flags", json::array()}};
  if (!rel_errs.empty()) {
    summary["median_rel_err"] = median(rel_errs);
    summary["min_rel_err"] = *std::min_element(rel_errs.begin(), rel_errs.end());
  }
  if (acc_kind != "none") {
    json acc{{"criterion", summary["name"]}, {"kind", acc_kind}};
    bool passed = !diverged && !rel_errs.empty();
    if (acc_kind == "approximation") {
      const double bound = get<double>(acc_cfg, "median_rel_err_below", 0.5, "config.acceptance");
      acc["median_rel_err_below"] = bound;
      passed = passed && median(rel_errs) < bound;
    } else {
      const double floor = get<double>(acc_cfg, "min_rel_err", 0.9, "config.acceptance");
      acc["min_rel_err"] = floor;
      passed = passed && *std::min_element(rel_errs.begin(), rel_errs.end()) >= floor;
      if (passed) summary["flags"].push_back("symmetry obstruction: rel_err ≥ " + fmt(floor, "%g"));
    }
    const double limit = get<double>(acc_cfg, "time_limit_seconds", 0.0, "config.acceptance");
    if (limit > 0.0) {
      acc["time_limit_seconds"] = limit;
      passed = passed && total < limit;
      if (spec.timestamp) acc["elapsed_seconds"] = total;
    }
    acc["passed"] = passed;
    summary["acceptance"] = acc;
  }
  write_summary(dir / "summary.json", summary, spec);
  for (const auto& flag : summary["flags"]) out << "flag: " << flag.get<std::string>() << "\n";
  return diverged ? exit_failure : exit_ok;
}

// --- converge ------------------------------------------------------------------------------

int cmd_converge(const ExperimentSpec& spec, std::ostream& out) {
  const json cfg = load_config(spec.config_path, "converge");
  require_keys(cfg, {"schema_version", "command", "name", "seed", "benchmark", "integrators", "base_steps_per_unit_time",
                     "levels", "inverse", "acceptance"},
               "config");
  const fs::path dir = out_dir(spec);
  const std::uint64_t seed = run_seed(cfg, spec);
  const json bench = get<json>(cfg, "benchmark", "config");
  const std::string bw = "config.benchmark";
  require_keys(bench, {"kind", "lambda", "x", "duration", "family", "dims", "layers", "activation"}, bw);
  const auto kind = get<std::string>(bench, "kind", bw);
  const double duration = get<double>(bench, "duration", 1.0, bw);
  if (!(duration > 0.0)) throw ConfigError(bw + ".duration must be positive");

  // Linear fields have the closed form x e^{lambda T}; "zero" is lambda = 0.
  Schedule sched;
  Vector x;
  std::optional<Vector> reference;
  if (kind == "linear" || kind == "zero") {
    const double lambda = kind == "zero" ? 0.0 : get<double>(bench, "lambda", 1.0, bw);
    x = get<Vector>(bench, "x", Vector{1.0, 0.5}, bw);
    if (x.empty()) throw ConfigError(bw + ".x must be non-empty");
    sched.segments.push_back({ControlLayer(Family::linear, {x.size()}, {lambda}), duration});
    Vector ref = x;
    for (auto& v : ref) v *= std::exp(lambda * duration);
    reference = ref;
  } else if (kind == "random") {
    const Family f = get_family(bench, bw);
    const auto dims = get_dims(bench, bw, {3});
    const auto act_name = get<std::string>(bench, "activation", "tanh", bw);
    const Activation act = parse_field(bw, [&] { return activation_from_string(act_name); });
    Rng rng(derive_seed(seed, 1));
    sched = parse_field(bw, [&] {
      return random_schedule(f, dims, get<std::size_t>(bench, "layers", 2, bw), act, rng);
    });
    for (auto& s : sched.segments) s.duration = duration;
    x = rng.uniform_vector(product_of(dims), -1.0, 1.0);
  } else {
    throw ConfigError(bw + ".kind: expected linear, zero or random");
  }

  const auto integrators = get<std::vector<std::string>>(cfg, "integrators", {"euler", "rk4"}, "config");
  const auto base = get<std::size_t>(cfg, "base_steps_per_unit_time", 10, "config");
  const auto levels = get<std::size_t>(cfg, "levels", 4, "config");
  if (base == 0) throw ConfigError("config.base_steps_per_unit_time must be positive");
  if (levels < (reference ? 2u : 3u)) throw ConfigError("config.levels: too few refinement levels");
  const json inverse_cfg = get<json>(cfg, "inverse", json::object(), "config");
  const json acc_cfg = get<json>(cfg, "acceptance", json::object(), "config");
  require_keys(acc_cfg, {"order", "inverse_tol"}, "config.acceptance");

  std::string table = csv_header(spec) + "integrator,steps_per_unit_time,total_steps,error,order\n";
  json per = json::object();
  bool passed = true;
  for (const auto& name : integrators) {
    const Integrator integ = parse_field("config.integrators", [&] { return integrator_from_string(name); });
    Schedule s = sched;
    s.integrator = integ;
    s.steps_per_unit_time = base;
    const RefinementStudy study = refinement_study(s, x, levels, reference);
    for (const auto& row : study.rows) {
      table += name + "," + std::to_string(row.steps_per_unit_time) + "," + std::to_string(row.total_steps) + "," +
               fmt(row.error, "%.10e") + "," + (study.exact ? "exact" : std::isnan(row.order) ? "" : fmt(row.order, "%.6f")) +
               "\n";
      out << name << " spu=" << row.steps_per_unit_time << " error=" << fmt(row.error) << " order="
          << (study.exact ? "exact" : std::isnan(row.order) ? "-" : fmt(row.order, "%.4f")) << "\n";
    }
    json entry{{"exact", study.exact}, {"orders", study.orders()}};
    if (acc_cfg.contains("order") && acc_cfg["order"].contains(name) && !study.exact) {
      const auto band = get<std::vector<double>>(acc_cfg["order"], name.c_str(), "config.acceptance.order");
      if (band.size() != 2) throw ConfigError("config.acceptance.order." + name + ": expected [lo, hi]");
      bool ok = !study.orders().empty();
      for (double o : study.orders()) ok = ok && o >= band[0] && o <= band[1];
      entry["order_band"] = band;
      entry["order_ok"] = ok;
      passed = passed && ok;
    }
    if (inverse_cfg.contains(name)) {
      // Round trip x -> phi(x) -> phi^-1(phi(x)) at a fixed total step count.
      const auto steps = get<std::size_t>(inverse_cfg, name.c_str(), "config.inverse");
      Schedule r = sched;
      r.integrator = integ;
      double total_time = 0.0;
      for (const auto& seg : r.segments) total_time += seg.duration;
      r.steps_per_unit_time = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(steps / total_time)));
      const Vector back = inverse_integrate(r, integrate(r, x).y);
      double err = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) err = std::max(err, std::abs(back[i] - x[i]));
      entry["inverse_steps"] = r.total_steps();
      entry["inverse_error"] = err;
      out << name << " inverse round trip (" << r.total_steps() << " steps): " << fmt(err) << "\n";
      if (acc_cfg.contains("inverse_tol") && acc_cfg["inverse_tol"].contains(name)) {
        const double tol = get<double>(acc_cfg["inverse_tol"], name.c_str(), "config.acceptance.inverse_tol");
        entry["inverse_tol"] = tol;
        entry["inverse_ok"] = err < tol;
        passed = passed && err < tol;
      }
    }
    per[name] = entry;
  }
  write_file(dir / "refinement.csv", table);
  json summary{{"command", "converge"},
               {"name", get<std::string>(cfg, "name", "converge", "config")},
               {"benchmark", kind},
               {"levels", levels},
               {"base_steps_per_unit_time", base},
               {"reference", reference ? "exact" : "successive"},
               {"integrators", per}};
  if (!acc_cfg.empty()) summary["acceptance"] = {{"criterion", summary["name"]}, {"passed", passed}};
  write_summary(dir / "summary.json", summary, spec);
  return passed ? exit_ok : exit_failure;
}

// --- partition -----------------------------------------------------------------------------

int cmd_partition(const ExperimentSpec& spec, std::ostream& out) {
  const json cfg = load_config(spec.config_path, "partition");
  require_keys(cfg, {"schema_version", "command", "name", "seed", "group", "samples", "transversal"}, "config");
  const fs::path dir = out_dir(spec);
  const std::uint64_t seed = run_seed(cfg, spec);
  const auto record = get<std::string>(cfg, "group", "config");
  const PermGroup g = parse_field("config.group", [&] { return parse_group(record); });
  if (g.degree() > max_transversal_degree) throw ConfigError("config.group: degree too large for transversals");
  const auto samples = get<std::size_t>(cfg, "samples", 10000, "config");
  const auto which = get<std::string>(cfg, "transversal", "min", "config");
  if (which != "min" && which != "max") throw ConfigError("config.transversal: expected min or max");
  const Transversal t = which == "min" ? right_transversal(g) : right_transversal_max(g);
  const VerificationReport r = partition_check(g, t, samples, seed);

  json rec = to_json(r);
  rec["group"] = record;
  write_file(dir / "reports.jsonl", rec.dump() + "\n");
  json reps = json::array();
  for (const auto& p : t.reps) reps.push_back(p.to_cycles());
  json summary{{"command", "partition"},
               {"name", get<std::string>(cfg, "name", "partition", "config")},
               {"group", record},
               {"transversal", reps},
               {"samples", samples},
               {"violations", r.violations},
               {"acceptance", {{"criterion", get<std::string>(cfg, "name", "partition", "config")},
                               {"passed", r.passed()}}}};
  write_summary(dir / "summary.json", summary, spec);
  out << record << ": " << t.reps.size() << " representatives, " << r.violations << " violations over " << samples
      << " samples\n";
  return r.passed() ? exit_ok : exit_failure;
}

// --- report --------------------------------------------------------------------------------

int cmd_report(const ExperimentSpec& spec, std::ostream& out) {
  if (spec.run_dirs.empty()) throw ConfigError("report: no run directories given");
  struct Row {
    std::string run, command, criterion, status;
  };
  std::vector<Row> rows;
  bool all_passed = true;
  for (const auto& d : spec.run_dirs) {
    const fs::path path = fs::path(d) / "summary.json";
    if (!fs::is_directory(d)) throw ConfigError("report: '" + d + "' is not a directory");
    if (!fs::exists(path)) throw ConfigError("report: '" + d + "' holds no summary.json");
    json s;
    try {
      std::ifstream f(path);
      s = json::parse(f);
    } catch (const json::parse_error& e) {
      throw ConfigError("report: " + path.string() + ": " + e.what());
    }
    Row row{d, s.value("command", "?"), s.value("name", "?"), "n/a"};
    if (s.contains("acceptance")) {
      const bool ok = s["acceptance"].value("passed", false);
      row.criterion = s["acceptance"].value("criterion", row.criterion);
      row.status = ok ? "PASS" : "FAIL";
      if (ok && s["acceptance"].value("kind", "") == "obstruction") row.status = "PASS (expected fail)";
      all_passed = all_passed && ok;
    }
    rows.push_back(row);
  }
  std::size_t w_run = 3, w_cmd = 7, w_crit = 9;
  for (const auto& r : rows) {
    w_run = std::max(w_run, r.run.size());
    w_cmd = std::max(w_cmd, r.command.size());
    w_crit = std::max(w_crit, r.criterion.size());
  }
  auto line = [&](const std::string& a, const std::string& b, const std::string& c, const std::string& d) {
    out << a << std::string(w_run - a.size() + 2, ' ') << b << std::string(w_cmd - b.size() + 2, ' ') << c
        << std::string(w_crit - c.size() + 2, ' ') << d << "\n";
  };
  line("run", "command", "criterion", "status");
  for (const auto& r : rows) line(r.run, r.command, r.criterion, r.status);
  if (!spec.out_dir.empty()) {
    json matrix = json::array();
    for (const auto& r : rows)
      matrix.push_back({{"run", r.run}, {"command", r.command}, {"criterion", r.criterion}, {"status", r.status}});
    write_summary(fs::path(spec.out_dir) / "report.json", {{"command", "report"}, {"rows", matrix}, {"passed", all_passed}},
                  spec);
  }
  return all_passed ? exit_ok : exit_failure;
}

// --- entry point ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Equivariant flow verification and training experiments", "eqflow"};
  app.require_subcommand(1);
  ExperimentSpec spec;
  std::uint64_t seed = 0;

  auto common = [&](CLI::App* sub, bool needs_config) {
    auto* c = sub->add_option("--config", spec.config_path, "Config file (JSON with schema_version)");
    if (needs_config) c->required()->check(CLI::ExistingFile);
    sub->add_option("--out", spec.out_dir, "Output directory")->required(needs_config);
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_flag("--no-timestamp", "Omit timestamps so reruns are byte-identical");
  };
  for (const char* name : {"verify", "train", "converge", "partition"}) {
    auto* sub = app.add_subcommand(name);
    common(sub, true);
  }
  auto* report = app.add_subcommand("report", "Aggregate run directories into a pass/fail matrix");
  report->add_option("runs", spec.run_dirs, "Run directories")->required();
  report->add_option("--out", spec.out_dir, "Write report.json here");
  report->add_flag("--no-timestamp", "Omit timestamps");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_usage;
  }
  CLI::App* sub = app.get_subcommands().front();
  spec.command = sub->get_name();
  if (const auto* opt = sub->get_option_no_throw("--seed"); opt && opt->count() > 0) spec.seed = seed;
  spec.timestamp = sub->get_option("--no-timestamp")->count() == 0;

  try {
    if (spec.command == "verify") return cmd_verify(spec, out);
    if (spec.command == "train") return cmd_train(spec, out);
    if (spec.command == "converge") return cmd_converge(spec, out);
    if (spec.command == "partition") return cmd_partition(spec, out);
    return cmd_report(spec, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_usage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_failure;
  }
}

}  // namespace eqflow::cli
