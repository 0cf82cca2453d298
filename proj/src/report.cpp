#include "eqflow/report.hpp"

#include <algorithm>
#include <cstdio>
#include <stdexcept>

namespace eqflow {

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::pass: return "pass";
    case Verdict::fail: return "fail";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "fail";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "pass") return Verdict::pass;
  if (s == "fail") return Verdict::fail;
  if (s == "inconclusive") return Verdict::inconclusive;
  throw std::invalid_argument("unknown verdict '" + s + "'");
}

void VerificationReport::observe(double magnitude) {
  worst_violation = std::max(worst_violation, magnitude);
}

void VerificationReport::record_violation(double magnitude, std::string witness) {
  ++violations;
  observe(magnitude);
  if (witnesses.size() < max_witnesses) witnesses.push_back(std::move(witness));
}

VerificationReport& VerificationReport::finalize(bool unresolved_is_inconclusive) {
  if (violations == 0) {
    verdict = Verdict::pass;
    witnesses.clear();
  } else {
    verdict = unresolved_is_inconclusive ? Verdict::inconclusive : Verdict::fail;
    if (witnesses.empty()) witnesses.push_back("(no witness recorded)");
  }
  return *this;
}

nlohmann::json to_json(const VerificationReport& r) {
  nlohmann::json j;
  j["checker"] = r.checker;
  j["samples"] = r.samples;
  j["violations"] = r.violations;
  j["worst_violation"] = r.worst_violation;
  j["tolerance"] = r.tolerance;
  j["witnesses"] = r.witnesses;
  j["verdict"] = to_string(r.verdict);
  j["metrics"] = r.metrics;
  j["notes"] = r.notes;
  return j;
}

VerificationReport report_from_json(const nlohmann::json& j) {
  VerificationReport r;
  r.checker = j.at("checker").get<std::string>();
  r.samples = j.at("samples").get<std::size_t>();
  r.violations = j.at("violations").get<std::size_t>();
  r.worst_violation = j.at("worst_violation").get<double>();
  r.tolerance = j.at("tolerance").get<double>();
  r.witnesses = j.at("witnesses").get<std::vector<std::string>>();
  r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
  if (j.contains("metrics")) r.metrics = j["metrics"].get<std::map<std::string, double>>();
  if (j.contains("notes")) r.notes = j["notes"].get<std::vector<std::string>>();
  return r;
}

std::string format_vector(const std::vector<double>& v) {
  std::string out = "[";
  char buf[32];
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.6g", v[i]);
    if (i) out += ", ";
    out += buf;
  }
  return out + "]";
}

}  // namespace eqflow
