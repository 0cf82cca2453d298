#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "eqflow/random.hpp"
#include "eqflow/well_functions.hpp"

using namespace eqflow;

TEST_SUITE("well_functions") {
  TEST_CASE("bump values") {
    CHECK(well_bump(0.0) == 0.0);
    CHECK(well_bump(2.0) == 1.0);
    CHECK(well_bump(-3.0) == 2.0);
    CHECK(well_bump(1.0) == 0.0);
    CHECK(well_bump(-1.0) == 0.0);
    CHECK(well_bump(std::nextafter(1.0, 2.0)) > 0.0);
    CHECK(well_bump(std::nextafter(-1.0, -2.0)) > 0.0);
  }

  TEST_CASE("bump zero set is exactly [-1, 1]") {
    Rng rng(1);
    for (int k = 0; k < 10000; ++k) {
      const double x = rng.uniform(-4, 4);
      REQUIRE((well_bump(x) == 0.0) == (x >= -1.0 && x <= 1.0));
    }
  }

  TEST_CASE("symmetric constructions") {
    const auto h = well_bump_function();
    const auto sum = sym_well_sum(h, 3);
    const auto coord = sym_well_coordwise(h, 3);
    CHECK(sum(std::vector<double>{0.2, 0.3, -0.4}) == 0.0);
    CHECK(sum(std::vector<double>{1, 1, 1}) == 2.0);
    CHECK(coord(std::vector<double>{0, 0.5, -1}) == 0.0);
    CHECK(coord(std::vector<double>{2, 0, 0}) == 1.0);
    CHECK_THROWS(sum(std::vector<double>{1, 2}));
  }

  TEST_CASE("symmetric constructions are invariant under every permutation") {
    Rng rng(2);
    const auto h = well_bump_function();
    for (std::size_t n = 2; n <= 5; ++n) {
      const auto perms = all_permutations(n);
      for (const auto& tau : {sym_well_sum(h, n), sym_well_coordwise(h, n)})
        for (int k = 0; k < 20; ++k) {
          const Vector x = rng.uniform_vector(n, -3, 3);
          const double fx = tau(x);
          for (const auto& p : perms) REQUIRE(tau(act_vector(p, x)) == doctest::Approx(fx).epsilon(1e-14));
        }
    }
  }

  TEST_CASE("sum construction has an unbounded zero set") {
    const auto tau = sym_well_sum(well_bump_function(), 3);
    // [r, -r, 0] lies outside the ball of radius r yet sums to zero.
    for (double r : {10.0, 1e3, 1e6}) CHECK(tau(std::vector<double>{r, -r, 0.0}) == 0.0);
  }

  TEST_CASE("1D well check") {
    const auto bump = check_1d_well(well_bump_function(), {-5, 5, 10001});
    CHECK(bump.passed());
    CHECK(bump.metrics.at("zero_lo") == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(bump.metrics.at("zero_hi") == doctest::Approx(1.0).epsilon(1e-3));

    const ScalarFunction relu{[](double x) { return std::max(x, 0.0); }, 1.0};
    const auto r = check_1d_well(relu, {-5, 5, 10001});
    CHECK(r.failed());
    CHECK(std::find(r.notes.begin(), r.notes.end(), "unbounded-at-grid-edge") != r.notes.end());

    const ScalarFunction square{[](double x) { return x * x; }, 10.0};
    const auto s = check_1d_well(square, {-5, 5, 10001});
    CHECK(s.failed());
    CHECK(std::find(s.notes.begin(), s.notes.end(), "degenerate") != s.notes.end());

    const ScalarFunction two_wells{[](double x) { return well_bump(std::abs(x) - 3.0); }, 1.0};
    CHECK(check_1d_well(two_wells, {-6, 6, 12001}).failed());
    CHECK_THROWS(check_1d_well(well_bump_function(), {1, 1, 10}));
    CHECK_THROWS(check_1d_well(well_bump_function(), {-1, 1, 1}));
  }

  TEST_CASE("symmetric invariant well check") {
    const auto h = well_bump_function();
    const double b = 1.0;
    const auto sum = check_symmetric_invariant_well(sym_well_sum(h, 3), 7);
    CHECK(sum.passed());
    // Escape radius for the sum construction: one coordinate beyond 1 + (n-1) b.
    CHECK(sum.metrics.at("escape_a") >= 1.0 + 2.0 * b - 1e-9);
    CHECK(sum.metrics.at("escape_a") <= 2.0 * (1.0 + 2.0 * b));

    const auto coord = check_symmetric_invariant_well(sym_well_coordwise(h, 3), 7);
    CHECK(coord.passed());
    CHECK(coord.metrics.at("escape_a") >= 1.0);
    CHECK(coord.metrics.at("escape_a") <= 2.0);

    const SymmetricWellCandidate zero{[](std::span<const double>) { return 0.0; }, 3, -1.0, 1.0};
    CHECK_FALSE(check_symmetric_invariant_well(zero, 7).passed());

    const SymmetricWellCandidate first{[](std::span<const double> x) { return well_bump(x[0]); }, 3, -1.0, 1.0};
    CHECK(check_symmetric_invariant_well(first, 7).failed());
  }
}
