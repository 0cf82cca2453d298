#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "eqflow/flow.hpp"
#include "eqflow/hypothesis.hpp"
#include "eqflow/report.hpp"

namespace eqflow {

using VectorMap = std::function<Vector(std::span<const double>)>;
using ScalarMap = std::function<double(std::span<const double>)>;

struct SamplingOptions {
  double lo = -1.0;
  double hi = 1.0;
  /// Group elements tried per sample; 0 means every element.
  std::size_t elements_per_sample = 0;
};

/// max over samples x and elements g of ||map(g x) - g map(x)||_inf.
VerificationReport check_equivariance(const VectorMap& map, const PermGroup& g, std::size_t samples, double tol,
                                      std::uint64_t seed, const SamplingOptions& options = {});
/// max over samples x and elements g of |fn(g x) - fn(x)|.
VerificationReport check_invariance(const ScalarMap& fn, const PermGroup& g, std::size_t samples, double tol,
                                    std::uint64_t seed, const SamplingOptions& options = {});

/// Draws `samples` triples (theta, x, g) with g from the family's declared
/// group and checks one layer and one random schedule. The flow gap is taken
/// relative to max(1, ||phi(x)||_inf). metrics: layer_worst, flow_worst. A
/// sample fails when either bound is exceeded.
VerificationReport check_family_equivariance(Family family, const std::vector<std::size_t>& dims, std::size_t samples,
                                             std::uint64_t seed, double layer_tol = 1e-12, double flow_tol = 1e-10);

/// flow_vjp against central differences of <c, integrate(schedule, x).y> over
/// `instances` random two-segment tanh schedules (Euler and RK4 alternating).
/// Per instance the error is ||g - g_fd||_2 / max(||g_fd||_2, 1e-12) over all
/// parameter and input entries. metrics: worst_relative_error.
VerificationReport check_flow_gradient(Family family, const std::vector<std::size_t>& dims, std::size_t instances,
                                       std::uint64_t seed, double step = 1e-5, double tol = 1e-5);

/// For every index i: |G| = |orbit(i)| |stab(i)| and stab(g i) = g stab(i) g^-1.
/// Both stock transversals satisfy the coset axioms with |A| |G| = n!, and the
/// translates g(Q_a) tile `partition_samples` random points exactly once.
VerificationReport check_group_algebra(const PermGroup& g, std::size_t partition_samples, std::uint64_t seed);

/// Increasing piecewise-linear u: slope slopes[0] left of knots[0],
/// slopes[m] between knots[m-1] and knots[m]. u(0) = 0 when there are no knots.
struct Zoom {
  Vector knots;
  Vector slopes{1.0};

  double operator()(double t) const;
  Vector apply(std::span<const double> x) const;
  static Zoom identity() { return {}; }
};

struct SearchOptions {
  /// Random parameter draws after the explicit constructions.
  std::size_t draws = 10000;
  /// Outputs closer than this are treated as equal.
  double margin = 1e-8;
  Activation activation = Activation::tanh;
  /// Random parameters are uniform in [-param_bound, param_bound].
  double param_bound = 3.0;
};

struct PerturbationWitness {
  Vector theta;
  Zoom zoom;
  /// 0-based coordinates with x_i = y_i2 and [f(u x)]_i != [f(u y)]_i2.
  std::size_t i = 0;
  std::size_t i2 = 0;
  double gap = 0.0;
  /// True when one of the explicit constructions already separates the pair.
  bool by_construction = false;
};

/// Explicit constructions first, then `options.draws` random (theta, zoom)
/// draws. nullopt when nothing separates the pair within the budget.
std::optional<PerturbationWitness> find_perturbation_witness(Family family, const std::vector<std::size_t>& dims,
                                                             std::span<const double> x, std::span<const double> y,
                                                             std::uint64_t seed, const SearchOptions& options = {});

/// Samples point pairs sharing at least one value, skips pairs in a common
/// G-orbit (metrics["filtered"]), and searches for f and a zoom u with
/// [f(u x)]_i != [f(u y)]_i' at some (i, i') where x_i = y_i'. Pairs without
/// a witness count as violations and make the verdict inconclusive.
VerificationReport check_perturbation_property(Family family, const std::vector<std::size_t>& dims,
                                               const PermGroup& g, std::size_t pairs, std::uint64_t seed,
                                               const SearchOptions& options = {});

/// Requires a = b∘(i j). Samples z on the common boundary of Q_a and Q_b
/// and searches for a layer with [f(z)]_i != [f(z)]_j. When the family's
/// declared group contains (i j) no such layer exists and the verdict is fail;
/// otherwise a failed search is inconclusive. Throws std::invalid_argument
/// when a and b do not differ by a transposition.
VerificationReport check_direct_connectivity(Family family, const std::vector<std::size_t>& dims,
                                             const Permutation& a, const Permutation& b, std::uint64_t seed,
                                             const SearchOptions& options = {});

struct ResolveOptions {
  std::size_t pairs = 100;
  SearchOptions perturbation{};
  /// Random draws per boundary edge after the constructions.
  std::size_t edge_draws = 200;
};

/// Perturbation property plus transversal transitivity: breadth-first search
/// over S_n along directly connected neighbours until every representative of
/// right_transversal(g) is reached. metrics: transversal_size, reached,
/// edges_checked, edges_found, edges_impossible. A disconnected transversal is
/// a fail; an unresolved perturbation search alone is inconclusive.
VerificationReport check_resolves(Family family, const std::vector<std::size_t>& dims, const PermGroup& g,
                                  std::uint64_t seed, const ResolveOptions& options = {});

/// 4(n-1) / (n(n+1)(n+2)): E[Var(min x | max x)] for x uniform on [-1,1]^n.
double min_given_max_floor(std::size_t n);

struct CounterexampleOptions {
  std::size_t schedules = 50;
  std::size_t n = 3;
  /// Models checked against the min-from-max floor (plus one trained model).
  std::size_t floor_models = 10;
  std::size_t floor_test_samples = 10000;
  std::size_t floor_train_iterations = 300;
  double floor_margin = 0.05;
};

/// Negative-family invariants: gamma1 flows shift every coordinate equally
/// (up to rounding), fsmax flows keep Q and the order of first coordinates,
/// fs1 flows break difference preservation, and max-terminal fsmax models stay
/// above the min-from-max error floor.
VerificationReport check_counterexamples(std::uint64_t seed, const CounterexampleOptions& options = {});

/// Parameters of the explicit constructions, exposed for tests.
std::vector<ControlLayer> basis_layers(Family family, const std::vector<std::size_t>& dims, Activation activation);

}  // namespace eqflow
