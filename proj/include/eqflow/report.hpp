#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace eqflow {

enum class Verdict { pass, fail, inconclusive };

std::string to_string(Verdict v);
Verdict verdict_from_string(const std::string& s);

/// Structured evidence produced by a property checker.
///
/// Invariants kept by `finalize()`: the verdict is `pass` exactly when
/// `violations == 0`, and `witnesses` is non-empty exactly when
/// `violations > 0`. An inconclusive verdict therefore always carries the
/// unresolved items as violations.
struct VerificationReport {
  static constexpr std::size_t max_witnesses = 10;

  std::string checker;
  std::size_t samples = 0;
  std::size_t violations = 0;
  double worst_violation = 0.0;
  double tolerance = 0.0;
  std::vector<std::string> witnesses;
  Verdict verdict = Verdict::pass;
  /// Checker-specific scalar facts (counts, found constants).
  std::map<std::string, double> metrics;
  std::vector<std::string> notes;

  VerificationReport() = default;
  VerificationReport(std::string name, double tol) : checker(std::move(name)), tolerance(tol) {}

  /// Records one failing sample. `magnitude` feeds `worst_violation`.
  void record_violation(double magnitude, std::string witness);
  void observe(double magnitude);

  /// Sets the verdict from the counts. `unresolved_is_inconclusive` turns a
  /// would-be `fail` into `inconclusive` (existential properties).
  VerificationReport& finalize(bool unresolved_is_inconclusive = false);

  bool passed() const { return verdict == Verdict::pass; }
  bool failed() const { return verdict == Verdict::fail; }
};

nlohmann::json to_json(const VerificationReport& r);
VerificationReport report_from_json(const nlohmann::json& j);

/// Compact single-line rendering of a vector for witnesses.
std::string format_vector(const std::vector<double>& v);

}  // namespace eqflow
