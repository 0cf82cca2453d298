#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "eqflow/perm_group.hpp"
#include "eqflow/report.hpp"

namespace eqflow {

/// Real function of one variable with a declared Lipschitz constant.
struct ScalarFunction {
  std::function<double(double)> fn;
  double lipschitz = 1.0;
  /// Zero set the construction is designed to have (informational).
  double zero_lo = 0.0;
  double zero_hi = 0.0;

  double operator()(double x) const { return fn(x); }
};

/// Permutation-invariant candidate vanishing on the box I^n, I = [box_lo, box_hi].
struct SymmetricWellCandidate {
  std::function<double(std::span<const double>)> fn;
  std::size_t degree = 0;
  double box_lo = 0.0;
  double box_hi = 0.0;

  double operator()(std::span<const double> x) const { return fn(x); }
};

inline constexpr double well_atol = 1e-12;
inline constexpr double escape_cap = 1e6;

/// relu(x-1) + relu(-x-1); zero exactly on [-1, 1].
double well_bump(double x);
/// Derivative of well_bump with the kink derivative fixed at 0.
double well_bump_derivative(double x);
ScalarFunction well_bump_function();

/// x -> h(x_1 + ... + x_n). Zero box is h's zero interval divided by n.
SymmetricWellCandidate sym_well_sum(const ScalarFunction& h, std::size_t n);
/// x -> h(x_1) + ... + h(x_n). Zero box is h's zero interval.
SymmetricWellCandidate sym_well_coordwise(const ScalarFunction& h, std::size_t n);

struct Grid {
  double lo = -5.0;
  double hi = 5.0;
  std::size_t count = 10001;
};

/// Samples f on an evenly spaced grid and requires the numerical zero set
/// (|f| <= atol) to be one contiguous run of at least two grid points that
/// does not touch either end of the grid. The report records the zero run as
/// metrics zero_lo / zero_hi; a failure note names the cause
/// ("empty", "degenerate", "non-contiguous", "unbounded-at-grid-edge").
VerificationReport check_1d_well(const ScalarFunction& f, const Grid& grid, double atol = well_atol);

struct SymmetricWellOptions {
  std::size_t samples = 2000;
  /// Bound on the non-escaping coordinates in the escape check.
  double b = 1.0;
  double invariance_tol = 1e-12;
  double atol = well_atol;
  double cap = escape_cap;
};

/// Runs the three defining sub-checks (S_n invariance, vanishing on I^n,
/// escape from zero). metrics["escape_a"] holds the smallest escape radius
/// found; an escape search that reaches the cap is inconclusive.
VerificationReport check_symmetric_invariant_well(const SymmetricWellCandidate& tau, std::uint64_t seed,
                                                  const SymmetricWellOptions& options = {});

}  // namespace eqflow
