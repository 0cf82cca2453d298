// Runs every shipped preset through the command line and prints one
// PASS/FAIL line per acceptance criterion. Thresholds are pinned here and
// checked against the written reports, independently of the preset files.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eqflow/cli.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double layer_tol = 1e-12;
constexpr double flow_tol = 1e-10;
constexpr std::size_t symmetry_samples = 200;
constexpr double symmetry_seconds = 60.0;
constexpr std::size_t partition_samples = 10000;
constexpr double algebra_seconds = 30.0;
constexpr double gradient_tol = 1e-5;
constexpr std::size_t gradient_instances = 100;
constexpr double euler_order_lo = 0.8, euler_order_hi = 1.2;
constexpr double rk4_order_lo = 3.5, rk4_order_hi = 4.5;
constexpr std::size_t refinement_levels = 4;
constexpr double euler_inverse_tol = 1e-3, rk4_inverse_tol = 1e-9;
constexpr std::size_t euler_inverse_steps = 1000, rk4_inverse_steps = 100;
constexpr double resolves_seconds = 300.0;
constexpr std::size_t counterexample_schedules = 50;
constexpr double approximation_median = 0.5;
constexpr double approximation_seconds = 600.0;
constexpr std::size_t approximation_seeds = 3;
constexpr double obstruction_floor = 0.9;

struct Run {
  int code = -1;
  double seconds = 0.0;
  fs::path dir;
  std::string log;
};

fs::path config_dir() {
  if (const char* d = std::getenv("EQFLOW_CONFIG_DIR")) return d;
  return EQFLOW_DEFAULT_CONFIG_DIR;
}

Run run(const std::string& command, const std::string& preset, const fs::path& dir, bool timestamp = false) {
  fs::remove_all(dir);
  std::vector<std::string> args{"eqflow", command, "--config", (config_dir() / (preset + ".json")).string(),
                                "--out", dir.string()};
  if (!timestamp) args.push_back("--no-timestamp");
  std::ostringstream out, err;
  const auto t0 = std::chrono::steady_clock::now();
  Run r;
  r.code = eqflow::cli::run(args, out, err);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  r.dir = dir;
  r.log = err.str();
  return r;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

std::vector<json> read_records(const fs::path& dir) {
  std::vector<json> out;
  std::ifstream f(dir / "reports.jsonl");
  for (std::string line; std::getline(f, line);)
    if (!line.empty()) out.push_back(json::parse(line));
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& why) {
    if (!ok) {
      passed = false;
      detail << " [" << why << "]";
    }
  }
};

bool all_passed = true;

void report_line(int id, const std::string& name, Outcome& o) {
  all_passed = all_passed && o.passed;
  std::cout << (o.passed ? "PASS" : "FAIL") << " " << id << " " << name << ":" << o.detail.str() << std::endl;
}

double metric(const json& rec, const char* key) { return rec.at("metrics").at(key).get<double>(); }

bool check_verify_run(Outcome& o, const Run& r) {
  o.require(r.code == 0, "exit " + std::to_string(r.code) + " " + r.log);
  return r.code == 0 || r.code == 1;
}

void criterion_symmetry(const fs::path& root) {
  Outcome o;
  const Run r = run("verify", "symmetry", root / "1");
  if (check_verify_run(o, r)) {
    double layer = 0, flow = 0;
    const auto recs = read_records(r.dir);
    o.require(!recs.empty(), "no reports");
    for (const auto& rec : recs) {
      layer = std::max(layer, metric(rec, "layer_worst"));
      flow = std::max(flow, metric(rec, "flow_worst"));
      o.require(rec.at("samples").get<std::size_t>() >= symmetry_samples, rec.value("label", "?") + " undersampled");
      o.require(rec.at("verdict") == "pass", rec.value("label", "?"));
    }
    o.require(layer <= layer_tol, "layer gap");
    o.require(flow <= flow_tol, "flow gap");
    o.detail << " checks=" << recs.size() << " layer_worst=" << layer << " flow_worst=" << flow;
  }
  o.require(r.seconds < symmetry_seconds, "too slow");
  o.detail << " seconds=" << r.seconds;
  report_line(1, "exact symmetry", o);
}

void criterion_algebra(const fs::path& root) {
  Outcome o;
  const Run algebra = run("verify", "group_algebra", root / "2a");
  const Run part = run("partition", "partition", root / "2b");
  const double seconds = algebra.seconds + part.seconds;
  if (check_verify_run(o, algebra)) {
    std::set<std::string> groups;
    for (const auto& rec : read_records(algebra.dir)) {
      o.require(rec.at("verdict") == "pass", rec.value("label", "?"));
      o.require(metric(rec, "partition_violations") == 0.0, rec.value("label", "?") + " partition");
      o.require(rec.at("samples").get<std::size_t>() >= partition_samples, rec.value("label", "?") + " undersampled");
      groups.insert(rec.value("label", ""));
    }
    for (const char* g : {"symmetric 3", "translation_1d 3", "translation_nd 2 3", "product 2 3"}) {
      const bool covered = std::any_of(groups.begin(), groups.end(),
                                       [&](const std::string& l) { return l.find(g) != std::string::npos; });
      o.require(covered, std::string("missing ") + g);
    }
    o.detail << " groups=" << groups.size();
  }
  if (check_verify_run(o, part)) o.require(read_json(part.dir / "summary.json").at("violations") == 0, "partition");
  o.require(seconds < algebra_seconds, "too slow");
  o.detail << " seconds=" << seconds;
  report_line(2, "group algebra", o);
}

void criterion_gradients(const fs::path& root) {
  Outcome o;
  const Run r = run("verify", "gradients", root / "3");
  if (check_verify_run(o, r)) {
    double worst = 0;
    const auto recs = read_records(r.dir);
    for (const auto& rec : recs) {
      worst = std::max(worst, metric(rec, "worst_relative_error"));
      o.require(rec.at("samples").get<std::size_t>() >= gradient_instances, rec.value("label", "?") + " undersampled");
    }
    o.require(!recs.empty() && worst < gradient_tol, "gradient error");
    o.detail << " families=" << recs.size() << " worst_relative_error=" << worst;
  }
  report_line(3, "flow gradients", o);
}

void criterion_convergence(const fs::path& root) {
  Outcome o;
  const Run r = run("converge", "converge", root / "4");
  o.require(r.code == 0, "exit " + std::to_string(r.code) + " " + r.log);
  if (r.code == 0 || r.code == 1) {
    const json s = read_json(r.dir / "summary.json");
    o.require(s.at("levels").get<std::size_t>() == refinement_levels, "levels");
    auto band = [&](const char* name, double lo, double hi, double inv_tol, std::size_t inv_steps) {
      const json& e = s.at("integrators").at(name);
      const auto orders = e.at("orders").get<std::vector<double>>();
      o.require(!orders.empty(), std::string(name) + " orders");
      for (double q : orders) o.require(q >= lo && q <= hi, std::string(name) + " order " + std::to_string(q));
      const double inv = e.at("inverse_error").get<double>();
      o.require(inv < inv_tol, std::string(name) + " inverse");
      o.require(e.at("inverse_steps").get<std::size_t>() == inv_steps, std::string(name) + " inverse steps");
      o.detail << " " << name << "_orders=[";
      for (std::size_t k = 0; k < orders.size(); ++k) o.detail << (k ? "," : "") << orders[k];
      o.detail << "] " << name << "_inverse=" << inv;
    };
    band("euler", euler_order_lo, euler_order_hi, euler_inverse_tol, euler_inverse_steps);
    band("rk4", rk4_order_lo, rk4_order_hi, rk4_inverse_tol, rk4_inverse_steps);
  }
  report_line(4, "convergence", o);
}

void criterion_resolves(const fs::path& root) {
  Outcome o;
  const Run r = run("verify", "resolves", root / "5");
  if (check_verify_run(o, r)) {
    std::size_t passes = 0;
    bool gamma_fails = false, gamma_disconnected = false;
    for (const auto& rec : read_records(r.dir)) {
      const std::string label = rec.value("label", "?");
      if (label.find("gamma1") != std::string::npos) {
        if (rec.at("checker") == "check_resolves") gamma_fails = rec.at("verdict") == "fail";
        else gamma_disconnected = rec.at("verdict") == "fail";
      } else {
        o.require(rec.at("verdict") == "pass", label);
        ++passes;
      }
    }
    o.require(gamma_fails, "gamma1 resolves");
    o.require(gamma_disconnected, "gamma1 direct connectivity");
    o.detail << " resolved=" << passes << " gamma1_fails=" << gamma_fails;
  }
  o.require(r.seconds < resolves_seconds, "too slow");
  o.detail << " seconds=" << r.seconds;
  report_line(5, "resolvence", o);
}

void criterion_counterexamples(const fs::path& root) {
  Outcome o;
  const Run r = run("verify", "counterexamples", root / "6");
  if (check_verify_run(o, r)) {
    const auto recs = read_records(r.dir);
    o.require(recs.size() == 1, "one record");
    for (const auto& rec : recs) {
      o.require(rec.at("verdict") == "pass", "verdict");
      o.require(rec.at("samples").get<std::size_t>() >= counterexample_schedules, "schedules");
      o.require(metric(rec, "gamma1_worst_over_bound") <= 1.0, "gamma1 differences");
      o.detail << " gamma1_worst_over_bound=" << metric(rec, "gamma1_worst_over_bound")
               << " fsmax_discretization_artifacts=" << metric(rec, "fsmax_discretization_artifacts");
    }
  }
  report_line(6, "counterexamples", o);
}

json train_summary(Outcome& o, const Run& r) {
  o.require(r.code == 0, "exit " + std::to_string(r.code) + " " + r.log);
  if (r.code != 0) return json::object();
  return read_json(r.dir / "summary.json");
}

void criterion_approximation(const Run& r) {
  Outcome o;
  const json s = train_summary(o, r);
  if (!s.empty()) {
    std::vector<double> errs;
    for (const auto& run : s.at("runs")) errs.push_back(run.at("rel_err").get<double>());
    o.require(errs.size() == approximation_seeds, "seed count");
    std::sort(errs.begin(), errs.end());
    const double median = errs.empty() ? NAN : errs[errs.size() / 2];
    o.require(median < approximation_median, "median relative error");
    o.detail << " median_rel_err=" << median;
  }
  o.require(r.seconds < approximation_seconds, "too slow");
  o.detail << " seconds=" << r.seconds;
  report_line(7, "approximation", o);
}

void criterion_obstruction(const Run& r) {
  Outcome o;
  const json s = train_summary(o, r);
  if (!s.empty()) {
    double lowest = INFINITY;
    for (const auto& run : s.at("runs")) lowest = std::min(lowest, run.at("rel_err").get<double>());
    o.require(lowest >= obstruction_floor, "relative error below floor");
    o.detail << " min_rel_err=" << lowest;
  }
  report_line(8, "obstruction", o);
}

void criterion_determinism(const Run& first7, const Run& first8, const fs::path& root) {
  Outcome o;
  const Run again7 = run("train", "train_conv1", root / "9a");
  const Run again8 = run("train", "train_fs1", root / "9b");
  std::size_t compared = 0;
  for (const auto& [a, b] : {std::pair{first7, again7}, std::pair{first8, again8}}) {
    o.require(a.code == 0 && b.code == 0, "train exit");
    for (const auto& entry : fs::recursive_directory_iterator(a.dir)) {
      if (!entry.is_regular_file()) continue;
      const fs::path rel = fs::relative(entry.path(), a.dir);
      if (rel.filename() != "history.csv" && rel.filename() != "summary.json") continue;
      const bool same = fs::exists(b.dir / rel) && slurp(entry.path()) == slurp(b.dir / rel);
      o.require(same, rel.string() + " differs");
      compared += rel.filename() == "history.csv";
    }
  }
  o.require(compared == 2 * approximation_seeds, "history count");
  o.detail << " histories=" << compared;
  report_line(9, "determinism", o);
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int k = 1; k < argc; ++k) only.insert(std::atoi(argv[k]));
  auto wanted = [&](int id) { return only.empty() || only.count(id) != 0; };

  const fs::path root = fs::temp_directory_path() / "eqflow_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);

  if (wanted(1)) criterion_symmetry(root);
  if (wanted(2)) criterion_algebra(root);
  if (wanted(3)) criterion_gradients(root);
  if (wanted(4)) criterion_convergence(root);
  if (wanted(5)) criterion_resolves(root);
  if (wanted(6)) criterion_counterexamples(root);
  if (wanted(7) || wanted(8) || wanted(9)) {
    const Run conv = run("train", "train_conv1", root / "7");
    if (wanted(7)) criterion_approximation(conv);
    const Run fs1 = run("train", "train_fs1", root / "8");
    if (wanted(8)) criterion_obstruction(fs1);
    if (wanted(9)) criterion_determinism(conv, fs1, root);
  }
  return all_passed ? 0 : 1;
}
