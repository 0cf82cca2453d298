#include "eqflow/well_functions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "eqflow/random.hpp"

namespace eqflow {

namespace {
double relu(double x) { return x > 0 ? x : 0.0; }
}  // namespace

double well_bump(double x) { return relu(x - 1.0) + relu(-x - 1.0); }

double well_bump_derivative(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return 0.0;
}

ScalarFunction well_bump_function() { return ScalarFunction{well_bump, 1.0, -1.0, 1.0}; }

SymmetricWellCandidate sym_well_sum(const ScalarFunction& h, std::size_t n) {
  if (n == 0) throw std::invalid_argument("sym_well_sum: n must be positive");
  auto fn = [h, n](std::span<const double> x) {
    if (x.size() != n) throw std::invalid_argument("sym_well_sum: dimension mismatch");
    return h(std::accumulate(x.begin(), x.end(), 0.0));
  };
  const double scale = static_cast<double>(n);
  return SymmetricWellCandidate{fn, n, h.zero_lo / scale, h.zero_hi / scale};
}

SymmetricWellCandidate sym_well_coordwise(const ScalarFunction& h, std::size_t n) {
  if (n == 0) throw std::invalid_argument("sym_well_coordwise: n must be positive");
  auto fn = [h, n](std::span<const double> x) {
    if (x.size() != n) throw std::invalid_argument("sym_well_coordwise: dimension mismatch");
    double s = 0.0;
    for (double v : x) s += h(v);
    return s;
  };
  return SymmetricWellCandidate{fn, n, h.zero_lo, h.zero_hi};
}

VerificationReport check_1d_well(const ScalarFunction& f, const Grid& grid, double atol) {
  if (!(grid.hi > grid.lo) || grid.count < 3 || !std::isfinite(grid.lo) || !std::isfinite(grid.hi))
    throw std::invalid_argument("check_1d_well: degenerate grid");

  VerificationReport report("check_1d_well", atol);
  const double step = (grid.hi - grid.lo) / static_cast<double>(grid.count - 1);
  std::vector<std::size_t> zeros;
  for (std::size_t k = 0; k < grid.count; ++k) {
    const double x = grid.lo + step * static_cast<double>(k);
    const double v = f(x);
    if (!std::isfinite(v)) {
      report.record_violation(std::numeric_limits<double>::infinity(), "non-finite value at x=" + std::to_string(x));
      continue;
    }
    if (std::abs(v) <= atol) zeros.push_back(k);
  }
  report.samples = grid.count;

  auto fail = [&](const std::string& cause) {
    report.notes.push_back(cause);
    report.record_violation(1.0, cause);
  };

  if (zeros.empty()) {
    fail("empty");
  } else {
    const std::size_t first = zeros.front(), last = zeros.back();
    report.metrics["zero_lo"] = grid.lo + step * static_cast<double>(first);
    report.metrics["zero_hi"] = grid.lo + step * static_cast<double>(last);
    if (last - first + 1 != zeros.size())
      fail("non-contiguous");
    else if (first == 0 || last == grid.count - 1)
      fail("unbounded-at-grid-edge");
    else if (zeros.size() < 2)
      fail("degenerate");
  }
  return report.finalize();
}

namespace {

/// True when tau is nonzero at every probe with one coordinate beyond `a`
/// and the rest strictly inside (-b, b).
bool escapes(const SymmetricWellCandidate& tau, double a, double b, double atol, Rng& rng, std::size_t random_probes) {
  const std::size_t n = tau.degree;
  const double outer = std::nextafter(a, std::numeric_limits<double>::infinity());
  const double inner = b * (1.0 - 1e-12);
  Vector x(n);
  auto nonzero = [&] { return std::abs(tau(x)) > atol; };

  const std::size_t corner_bits = n - 1 <= 10 ? n - 1 : 10;
  for (std::size_t i = 0; i < n; ++i) {
    for (double sign : {1.0, -1.0}) {
      // Corners of the inner box, plus its centre.
      for (std::size_t mask = 0; mask < (std::size_t{1} << corner_bits); ++mask) {
        std::size_t bit = 0;
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          x[j] = (bit < corner_bits && ((mask >> bit) & 1u)) ? inner : -inner;
          ++bit;
        }
        x[i] = sign * outer;
        if (!nonzero()) return false;
      }
      std::fill(x.begin(), x.end(), 0.0);
      x[i] = sign * outer;
      if (!nonzero()) return false;
    }
  }
  for (std::size_t s = 0; s < random_probes; ++s) {
    const std::size_t i = rng.index(n);
    for (std::size_t j = 0; j < n; ++j) x[j] = rng.uniform(-inner, inner);
    x[i] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * outer * (1.0 + 3.0 * rng.uniform());
    if (!nonzero()) return false;
  }
  return true;
}

}  // namespace

VerificationReport check_symmetric_invariant_well(const SymmetricWellCandidate& tau, std::uint64_t seed,
                                                  const SymmetricWellOptions& options) {
  const std::size_t n = tau.degree;
  if (n == 0) throw std::invalid_argument("check_symmetric_invariant_well: zero degree");
  VerificationReport report("check_symmetric_invariant_well", options.invariance_tol);
  Rng rng(seed);

  // (1) Invariance under random permutations.
  {
    Rng sub = rng.split(1);
    std::vector<std::size_t> images(n);
    for (std::size_t s = 0; s < options.samples; ++s) {
      const auto x = sub.uniform_vector(n, -3.0, 3.0);
      std::iota(images.begin(), images.end(), 1);
      for (std::size_t k = n; k > 1; --k) std::swap(images[k - 1], images[sub.index(k)]);
      const auto gx = act_vector(Permutation::from_images(images), x);
      const double gap = std::abs(tau(gx) - tau(x));
      report.observe(gap);
      if (gap > options.invariance_tol) report.record_violation(gap, "invariance: " + format_vector(x));
    }
  }
  // (2) Vanishing on the declared box.
  {
    Rng sub = rng.split(2);
    for (std::size_t s = 0; s < options.samples; ++s) {
      const auto x = sub.uniform_vector(n, tau.box_lo, tau.box_hi);
      const double v = std::abs(tau(x));
      if (v > options.atol) report.record_violation(v, "nonzero on box: " + format_vector(x));
    }
  }
  // (3) Escape: doubling search for a, then bisection down to the smallest passing a.
  {
    Rng sub = rng.split(3);
    const std::size_t probes = std::max<std::size_t>(64, options.samples / 8);
    double lo = 0.0, hi = 1.0;
    while (hi <= options.cap && !escapes(tau, hi, options.b, options.atol, sub, probes)) {
      lo = hi;
      hi *= 2.0;
    }
    if (hi > options.cap) {
      report.metrics["escape_a"] = std::numeric_limits<double>::infinity();
      report.notes.push_back("escape condition not met for any a <= cap (inconclusive beyond the cap)");
      report.record_violation(0.0, "escape: no a <= " + std::to_string(options.cap));
    } else {
      for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (escapes(tau, mid, options.b, options.atol, sub, probes))
          hi = mid;
        else
          lo = mid;
      }
      report.metrics["escape_a"] = hi;
    }
  }
  report.metrics["b"] = options.b;
  report.samples = 2 * options.samples;
  return report.finalize();
}

}  // namespace eqflow
