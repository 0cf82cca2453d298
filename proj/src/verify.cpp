#include "eqflow/verify.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <optional>
#include <set>
#include <stdexcept>

namespace eqflow {

namespace {

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Uniform sample from [lo, hi]^n; redrawn until in general position.
Vector general_position_sample(Rng& rng, std::size_t n, double lo, double hi) {
  for (;;) {
    Vector x = rng.uniform_vector(n, lo, hi);
    if (n < 2 || is_general_position(x)) return x;
  }
}

std::vector<const Permutation*> pick_elements(const PermGroup& g, std::size_t k, Rng& rng) {
  std::vector<const Permutation*> out;
  if (k == 0 || k >= g.size()) {
    for (const auto& p : g.elements()) out.push_back(&p);
  } else {
    for (std::size_t i = 0; i < k; ++i) out.push_back(&g.elements()[rng.index(g.size())]);
  }
  return out;
}

std::string witness(const std::string& label, std::span<const double> x, const Permutation* g) {
  std::string s = label + " x=" + format_vector(Vector(x.begin(), x.end()));
  if (g) s += " g=" + g->to_cycles();
  return s;
}

}  // namespace

// --- Equivariance and invariance ------------------------------------------------------------

VerificationReport check_equivariance(const VectorMap& map, const PermGroup& g, std::size_t samples, double tol,
                                      std::uint64_t seed, const SamplingOptions& options) {
  VerificationReport r("check_equivariance", tol);
  Rng rng(seed);
  const std::size_t n = g.degree();
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector x = rng.uniform_vector(n, options.lo, options.hi);
    const Vector fx = map(x);
    for (const Permutation* h : pick_elements(g, options.elements_per_sample, rng)) {
      const double gap = max_abs_diff(map(act_vector(*h, x)), act_vector(*h, fx));
      r.observe(gap);
      if (gap > tol) r.record_violation(gap, witness("", x, h));
    }
  }
  r.samples = samples;
  r.metrics["group_size"] = static_cast<double>(g.size());
  return r.finalize();
}

VerificationReport check_invariance(const ScalarMap& fn, const PermGroup& g, std::size_t samples, double tol,
                                    std::uint64_t seed, const SamplingOptions& options) {
  VerificationReport r("check_invariance", tol);
  Rng rng(seed);
  const std::size_t n = g.degree();
  for (std::size_t s = 0; s < samples; ++s) {
    const Vector x = rng.uniform_vector(n, options.lo, options.hi);
    const double fx = fn(x);
    for (const Permutation* h : pick_elements(g, options.elements_per_sample, rng)) {
      const double gap = std::abs(fn(act_vector(*h, x)) - fx);
      r.observe(gap);
      if (gap > tol) r.record_violation(gap, witness("", x, h));
    }
  }
  r.samples = samples;
  r.metrics["group_size"] = static_cast<double>(g.size());
  return r.finalize();
}

VerificationReport check_family_equivariance(Family family, const std::vector<std::size_t>& dims, std::size_t samples,
                                             std::uint64_t seed, double layer_tol, double flow_tol) {
  VerificationReport r("check_family_equivariance", layer_tol);
  Rng rng(seed);
  const std::size_t n = product_of(dims);
  const PermGroup g = declared_group(random_layer(family, dims, Activation::tanh, rng));
  double layer_worst = 0.0, flow_worst = 0.0;
  std::size_t redraws = 0;
  const Activation acts[] = {Activation::tanh, Activation::sigmoid, Activation::relu};
  for (std::size_t s = 0; s < samples; ++s) {
    const Activation act = acts[s % 3];
    const ControlLayer layer = random_layer(family, dims, act, rng);
    const Vector x = rng.uniform_vector(n, -1.0, 1.0);
    const Permutation& h = g.elements()[rng.index(g.size())];
    const double layer_gap = max_abs_diff(layer.eval(act_vector(h, x)), act_vector(h, layer.eval(x)));

    // Quadratic pooling with relu can blow up in finite time; such draws are replaced.
    double flow_gap = 0.0;
    for (std::size_t attempt = 0;; ++attempt) {
      Schedule sched = random_schedule(family, dims, 2, attempt < 5 ? act : Activation::tanh, rng, -1.0, 1.0,
                                       s % 2 ? Integrator::rk4 : Integrator::euler, 10);
      for (auto& seg : sched.segments) seg.duration = rng.uniform(0.1, 1.0);
      try {
        // Rounding scales with the state, so the gap is measured relative to max(1, |phi(x)|).
        const Vector y = integrate(sched, x).y;
        double scale = 1.0;
        for (double v : y) scale = std::max(scale, std::abs(v));
        flow_gap = max_abs_diff(integrate(sched, act_vector(h, x)).y, act_vector(h, y)) / scale;
        break;
      } catch (const FlowBlowUp&) {
        ++redraws;
      }
    }

    layer_worst = std::max(layer_worst, layer_gap);
    flow_worst = std::max(flow_worst, flow_gap);
    r.observe(layer_gap);
    if (layer_gap > layer_tol || flow_gap > flow_tol)
      r.record_violation(std::max(layer_gap, flow_gap), witness(to_string(family), x, &h));
  }
  r.samples = samples;
  r.metrics["layer_worst"] = layer_worst;
  r.metrics["flow_worst"] = flow_worst;
  r.metrics["flow_tolerance"] = flow_tol;
  r.metrics["blow_up_redraws"] = static_cast<double>(redraws);
  r.metrics["group_size"] = static_cast<double>(g.size());
  return r.finalize();
}

// --- Gradients and group algebra ----------------------------------------------------------

VerificationReport check_flow_gradient(Family family, const std::vector<std::size_t>& dims, std::size_t instances,
                                       std::uint64_t seed, double step, double tol) {
  VerificationReport r("check_flow_gradient", tol);
  Rng rng(seed);
  const std::size_t n = product_of(dims);
  double worst = 0.0;
  for (std::size_t s = 0; s < instances; ++s) {
    Schedule sched = random_schedule(family, dims, 2, Activation::tanh, rng, -1.0, 1.0,
                                     s % 2 ? Integrator::rk4 : Integrator::euler, 10);
    for (auto& seg : sched.segments) seg.duration = rng.uniform(0.1, 1.0);
    const Vector x = rng.uniform_vector(n, -1.0, 1.0);
    const Vector c = rng.uniform_vector(n, -1.0, 1.0);
    auto objective = [&](const Schedule& sc, std::span<const double> at) {
      const Vector y = integrate(sc, at).y;
      return std::inner_product(y.begin(), y.end(), c.begin(), 0.0);
    };
    const FlowGradient grad = flow_vjp(sched, x, c);

    Vector analytic, numeric;
    const Vector theta = sched.flat_params();
    for (const auto& gp : grad.params) analytic.insert(analytic.end(), gp.begin(), gp.end());
    for (std::size_t k = 0; k < theta.size(); ++k) {
      Vector plus = theta, minus = theta;
      plus[k] += step;
      minus[k] -= step;
      numeric.push_back((objective(sched.with_flat_params(plus), x) - objective(sched.with_flat_params(minus), x)) /
                        (2.0 * step));
    }
    analytic.insert(analytic.end(), grad.x.begin(), grad.x.end());
    for (std::size_t k = 0; k < n; ++k) {
      Vector plus = x, minus = x;
      plus[k] += step;
      minus[k] -= step;
      numeric.push_back((objective(sched, plus) - objective(sched, minus)) / (2.0 * step));
    }
    double diff = 0.0, norm = 0.0;
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      diff += (analytic[k] - numeric[k]) * (analytic[k] - numeric[k]);
      norm += numeric[k] * numeric[k];
    }
    const double rel = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
    worst = std::max(worst, rel);
    r.observe(rel);
    if (!(rel < tol)) r.record_violation(rel, witness(to_string(family) + " " + to_string(sched.integrator), x, nullptr));
  }
  r.samples = instances;
  r.metrics["worst_relative_error"] = worst;
  return r.finalize();
}

VerificationReport check_group_algebra(const PermGroup& g, std::size_t partition_samples, std::uint64_t seed) {
  VerificationReport r("check_group_algebra", 0.0);
  const std::size_t n = g.degree();
  std::size_t identities = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::set<std::size_t> orbit;
    for (const auto& h : g.elements()) orbit.insert(h.image0(i));
    const PermGroup stab = stabilizer(g, i + 1);
    ++identities;
    if (orbit.size() * stab.size() != g.size())
      r.record_violation(1.0, "orbit-stabilizer fails at index " + std::to_string(i + 1));
    for (const auto& h : g.elements()) {
      const PermGroup image_stab = stabilizer(g, h.image0(i) + 1);
      const Permutation h_inv = inverse(h);
      bool conjugate = image_stab.size() == stab.size();
      for (std::size_t k = 0; conjugate && k < stab.size(); ++k)
        conjugate = image_stab.contains(compose(h, compose(stab.elements()[k], h_inv)));
      ++identities;
      if (!conjugate)
        r.record_violation(1.0, "stabilizers not conjugate: i=" + std::to_string(i + 1) + " g=" + h.to_cycles());
    }
  }
  std::size_t factorial = 1;
  for (std::size_t k = 2; k <= n; ++k) factorial *= k;
  std::size_t partition_violations = 0;
  for (const Transversal& t : {right_transversal(g), right_transversal_max(g)}) {
    ++identities;
    if (!is_transversal(g, t) || t.reps.size() * g.size() != factorial)
      r.record_violation(1.0, "transversal axioms fail for " + std::to_string(t.reps.size()) + " representatives");
    const VerificationReport part = partition_check(g, t, partition_samples, seed);
    partition_violations += part.violations;
    for (const auto& w : part.witnesses) r.record_violation(1.0, "partition: " + w);
  }
  r.samples = identities + 2 * partition_samples;
  r.metrics["group_size"] = static_cast<double>(g.size());
  r.metrics["transversal_size"] = static_cast<double>(factorial / g.size());
  r.metrics["partition_violations"] = static_cast<double>(partition_violations);
  return r.finalize();
}

// --- Zooms and constructions ----------------------------------------------------------------

double Zoom::operator()(double t) const {
  double u = slopes[0] * t;
  for (std::size_t m = 0; m < knots.size(); ++m)
    if (t > knots[m]) u += (slopes[m + 1] - slopes[m]) * (t - knots[m]);
  return u;
}

Vector Zoom::apply(std::span<const double> x) const {
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (*this)(x[i]);
  return out;
}

namespace {

Zoom random_zoom(Rng& rng) {
  Zoom z;
  const std::size_t k = rng.index(9);
  // Half of the draws keep every knot near the sampling box, where it matters.
  const double span = rng.uniform() < 0.5 ? 1.5 : 10.0;
  for (std::size_t m = 0; m < k; ++m) z.knots.push_back(rng.uniform(-span, span));
  std::sort(z.knots.begin(), z.knots.end());
  z.slopes.clear();
  for (std::size_t m = 0; m <= k; ++m) z.slopes.push_back(std::pow(10.0, rng.uniform(-3.0, 2.0)));
  return z;
}

/// One-knot zooms with the knot between consecutive distinct values of x and y.
std::vector<Zoom> targeted_zooms(std::span<const double> x, std::span<const double> y) {
  std::vector<double> values(x.begin(), x.end());
  values.insert(values.end(), y.begin(), y.end());
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<Zoom> out{Zoom::identity()};
  for (std::size_t k = 0; k + 1 < values.size(); ++k) {
    const double mid = 0.5 * (values[k] + values[k + 1]);
    out.push_back(Zoom{{mid}, {1e-3, 1.0}});
    out.push_back(Zoom{{mid}, {1.0, 1e-3}});
  }
  return out;
}

Vector unit(std::size_t n, std::size_t k) {
  Vector e(n, 0.0);
  e[k] = 1.0;
  return e;
}

}  // namespace

std::vector<ControlLayer> basis_layers(Family family, const std::vector<std::size_t>& dims, Activation activation) {
  const std::size_t n = product_of(dims);
  std::vector<ControlLayer> out;
  auto add = [&](Vector p) { out.emplace_back(family, dims, std::move(p), activation); };
  switch (family) {
    case Family::conv1:
    case Family::conv2:
      // Filter e_k reads coordinate j+k; v = 1, b = 0.
      for (std::size_t k = 0; k < n; ++k) {
        Vector p = unit(n, k);
        p.push_back(1.0);
        p.push_back(0.0);
        add(p);
      }
      break;
    case Family::fs1:
      add({1.0, 0.0, 1.0, 0.0});
      add({1.0, 1.0, 1.0, 0.0});
      break;
    case Family::fs2:
      add({0.0, 1.0, 0.0, 1.0, 0.0, 0.0});
      add({1.0, 1.0, 1.0, 1.0, 0.0, 0.0});
      break;
    case Family::janossy1:
    case Family::janossy2:
    case Family::fsmax:
      add({1.0, 0.0, 1.0, 0.0});
      add({1.0, 1.0, 1.0, 0.0});
      break;
    case Family::prod2d_1:
    case Family::prod2d_2:
    case Family::prodkd_1:
    case Family::prodkd_2: {
      const std::size_t k = dims.size();
      const bool second = family == Family::prod2d_2 || family == Family::prodkd_2;
      // Pooled weights: each axis alone, then all axes with distinct weights.
      std::vector<Vector> pooled;
      for (std::size_t a = 0; a < k; ++a) pooled.push_back(unit(k, a));
      Vector mixed(k);
      for (std::size_t a = 0; a < k; ++a) mixed[a] = std::sqrt(static_cast<double>(a + 2));
      pooled.push_back(mixed);
      for (const auto& w : pooled) {
        Vector p{1.0, 0.0};
        p.insert(p.end(), w.begin(), w.end());
        if (second) p.insert(p.end(), k, 0.0);
        p.push_back(0.0);
        add(p);
      }
      break;
    }
    case Family::gamma1: add({}); break;
    case Family::linear: add({1.0}); break;
  }
  return out;
}

// --- Perturbation property ----------------------------------------------------------------

namespace {

bool same_orbit(const PermGroup& g, std::span<const double> x, std::span<const double> y) {
  for (const auto& h : g.elements()) {
    const Vector hx = act_vector(h, x);
    if (std::equal(hx.begin(), hx.end(), y.begin())) return true;
  }
  return false;
}

struct Separation {
  bool found = false;
  std::size_t i = 0, i2 = 0;
  double gap = 0.0;
};

Separation separates(const ControlLayer& f, const Zoom& u, std::span<const double> x, std::span<const double> y,
                     double margin) {
  const Vector fx = f.eval(u.apply(x)), fy = f.eval(u.apply(y));
  Separation best;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t i2 = 0; i2 < y.size(); ++i2)
      if (x[i] == y[i2]) {
        const double gap = std::abs(fx[i] - fy[i2]);
        if (gap > margin && gap > best.gap) best = {true, i, i2, gap};
      }
  return best;
}

/// Pair kinds cycle through: shared single value, transposed copy, permuted
/// copy with one coordinate replaced, and a copy with one coordinate replaced.
Vector partner(Rng& rng, std::span<const double> x, std::size_t kind) {
  const std::size_t n = x.size();
  Vector y;
  switch (kind % 4) {
    case 0: {
      y = general_position_sample(rng, n, -1.0, 1.0);
      y[rng.index(n)] = x[rng.index(n)];
      break;
    }
    case 1: {
      const std::size_t i = rng.index(n);
      std::size_t j = rng.index(n - 1);
      if (j >= i) ++j;
      y = act_vector(Permutation::transposition(n, i + 1, j + 1), x);
      break;
    }
    case 2: {
      std::vector<std::size_t> images(n);
      std::iota(images.begin(), images.end(), 1);
      for (std::size_t k = n; k > 1; --k) std::swap(images[k - 1], images[rng.index(k)]);
      y = act_vector(Permutation::from_images(images), x);
      y[rng.index(n)] = rng.uniform(-1.0, 1.0);
      break;
    }
    default: {
      y.assign(x.begin(), x.end());
      y[rng.index(n)] = rng.uniform(-1.0, 1.0);
      break;
    }
  }
  return y;
}

}  // namespace

std::optional<PerturbationWitness> find_perturbation_witness(Family family, const std::vector<std::size_t>& dims,
                                                             std::span<const double> x, std::span<const double> y,
                                                             std::uint64_t seed, const SearchOptions& options) {
  const std::size_t n = product_of(dims);
  if (x.size() != n || y.size() != n) throw std::invalid_argument("find_perturbation_witness: size mismatch");
  for (const auto& u : targeted_zooms(x, y))
    for (const auto& f : basis_layers(family, dims, options.activation)) {
      const Separation hit = separates(f, u, x, y, options.margin);
      if (hit.found) return PerturbationWitness{f.params(), u, hit.i, hit.i2, hit.gap, true};
    }
  Rng rng(seed);
  for (std::size_t d = 0; d < options.draws; ++d) {
    const ControlLayer f = random_layer(family, dims, options.activation, rng, -options.param_bound, options.param_bound);
    const Zoom u = d % 2 ? random_zoom(rng) : Zoom::identity();
    const Separation hit = separates(f, u, x, y, options.margin);
    if (hit.found) return PerturbationWitness{f.params(), u, hit.i, hit.i2, hit.gap, false};
  }
  return std::nullopt;
}

VerificationReport check_perturbation_property(Family family, const std::vector<std::size_t>& dims,
                                               const PermGroup& g, std::size_t pairs, std::uint64_t seed,
                                               const SearchOptions& options) {
  const std::size_t n = product_of(dims);
  if (g.degree() != n) throw std::invalid_argument("check_perturbation_property: group degree mismatch");
  if (n < 2) throw std::invalid_argument("check_perturbation_property: degree must be at least 2");
  VerificationReport r("check_perturbation_property", options.margin);
  Rng rng(seed);
  std::size_t filtered = 0, by_construction = 0, by_search = 0, tested = 0;
  for (std::size_t k = 0; k < pairs; ++k) {
    Rng pair_rng = rng.split(k);
    const Vector x = general_position_sample(pair_rng, n, -1.0, 1.0);
    const Vector y = partner(pair_rng, x, k);
    if (same_orbit(g, x, y)) {
      ++filtered;
      continue;
    }
    ++tested;
    const auto w = find_perturbation_witness(family, dims, x, y, derive_seed(seed, 1000 + k), options);
    if (!w) {
      r.record_violation(0.0, "no separating layer: x=" + format_vector(x) + " y=" + format_vector(y));
      continue;
    }
    ++(w->by_construction ? by_construction : by_search);
    r.observe(w->gap);
  }
  r.samples = tested;
  r.metrics["filtered"] = static_cast<double>(filtered);
  r.metrics["by_construction"] = static_cast<double>(by_construction);
  r.metrics["by_search"] = static_cast<double>(by_search);
  if (r.violations) r.notes.push_back("search budget exhausted without a witness; absence is not a disproof");
  return r.finalize(true);
}

// --- Direct connectivity ----------------------------------------------------------------------

namespace {

/// (i, j), 0-based with i < j, when p = q∘(i j); nullopt otherwise.
std::optional<std::pair<std::size_t, std::size_t>> transposition_between(const Permutation& p, const Permutation& q) {
  const Permutation t = compose(inverse(q), p);
  std::vector<std::size_t> moved;
  for (std::size_t i = 0; i < t.degree(); ++i)
    if (t.image0(i) != i) moved.push_back(i);
  if (moved.size() != 2) return std::nullopt;
  return std::make_pair(moved[0], moved[1]);
}

/// Coordinates ordered as in the chain of Q_a (largest first), 0-based.
std::vector<std::size_t> chain_of(const Permutation& a) {
  const Permutation inv = inverse(a);
  std::vector<std::size_t> chain(a.degree());
  for (std::size_t r = 0; r < a.degree(); ++r) chain[r] = inv.image0(r);
  return chain;
}

/// Point of the closures of Q_a and Q_b: chain order of `a` with the block of
/// chain positions from i to j collapsed to one value.
Vector boundary_point(Rng& rng, const std::vector<std::size_t>& chain, std::size_t i, std::size_t j) {
  const std::size_t n = chain.size();
  std::size_t pi = 0, pj = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (chain[r] == i) pi = r;
    if (chain[r] == j) pj = r;
  }
  if (pi > pj) std::swap(pi, pj);
  Vector values = general_position_sample(rng, n, -1.0, 1.0);
  std::sort(values.begin(), values.end(), std::greater<>());
  Vector z(n);
  for (std::size_t r = 0; r < n; ++r) z[chain[r]] = values[r >= pi && r <= pj ? pi : r];
  return z;
}

struct EdgeOutcome {
  bool found = false;
  bool impossible = false;
  Vector z;
  Vector theta;
  double gap = 0.0;
};

bool declared_group_has(const ControlLayer& probe, std::size_t i, std::size_t j) {
  return declared_group(probe).contains(Permutation::transposition(probe.degree(), i + 1, j + 1));
}

EdgeOutcome search_edge(Family family, const std::vector<std::size_t>& dims, const std::vector<ControlLayer>& basis,
                        bool impossible, const std::vector<std::size_t>& chain, std::size_t i, std::size_t j, Rng& rng,
                        std::size_t draws, const SearchOptions& options) {
  EdgeOutcome out;
  if (impossible) {
    out.impossible = true;
    return out;
  }
  Vector z = boundary_point(rng, chain, i, j);
  auto test = [&](const ControlLayer& f) {
    const Vector fz = f.eval(z);
    const double gap = std::abs(fz[i] - fz[j]);
    if (gap > options.margin) {
      out = {true, false, z, f.params(), gap};
      return true;
    }
    return false;
  };
  for (const auto& f : basis)
    if (test(f)) return out;
  for (std::size_t d = 0; d < draws; ++d) {
    if (d % 50 == 49) z = boundary_point(rng, chain, i, j);
    if (test(random_layer(family, dims, options.activation, rng, -options.param_bound, options.param_bound)))
      return out;
  }
  return out;
}

}  // namespace

VerificationReport check_direct_connectivity(Family family, const std::vector<std::size_t>& dims,
                                             const Permutation& a, const Permutation& b, std::uint64_t seed,
                                             const SearchOptions& options) {
  const std::size_t n = product_of(dims);
  if (a.degree() != n || b.degree() != n) throw std::invalid_argument("check_direct_connectivity: degree mismatch");
  const auto ij = transposition_between(a, b);
  if (!ij) throw std::invalid_argument("check_direct_connectivity: a and b do not differ by a transposition");
  const auto [i, j] = *ij;
  VerificationReport r("check_direct_connectivity", options.margin);
  Rng rng(seed);
  const auto basis = basis_layers(family, dims, options.activation);
  const bool impossible = declared_group_has(basis.front(), i, j);
  const EdgeOutcome e = search_edge(family, dims, basis, impossible, chain_of(b), i, j, rng, options.draws, options);
  r.samples = 1;
  r.metrics["i"] = static_cast<double>(i + 1);
  r.metrics["j"] = static_cast<double>(j + 1);
  if (e.found) {
    r.observe(e.gap);
    r.notes.push_back("witness z=" + format_vector(e.z) + " theta=" + format_vector(e.theta));
    return r.finalize();
  }
  if (e.impossible) {
    r.notes.push_back("(" + std::to_string(i + 1) + " " + std::to_string(j + 1) +
                      ") lies in the family's symmetry group, so [f(z)]_i = [f(z)]_j whenever z_i = z_j");
    r.record_violation(0.0, "no layer separates coordinates " + std::to_string(i + 1) + " and " +
                                std::to_string(j + 1));
    return r.finalize();
  }
  r.notes.push_back("search budget exhausted without a witness; absence is not a disproof");
  r.record_violation(0.0, "unresolved boundary between " + a.to_cycles() + " and " + b.to_cycles());
  return r.finalize(true);
}

// --- Resolvence ------------------------------------------------------------------------------

VerificationReport check_resolves(Family family, const std::vector<std::size_t>& dims, const PermGroup& g,
                                  std::uint64_t seed, const ResolveOptions& options) {
  const std::size_t n = product_of(dims);
  if (g.degree() != n) throw std::invalid_argument("check_resolves: group degree mismatch");
  Rng rng(seed);
  const VerificationReport pert =
      check_perturbation_property(family, dims, g, options.pairs, derive_seed(seed, 1), options.perturbation);

  VerificationReport r("check_resolves", options.perturbation.margin);
  const Transversal t = right_transversal(g);
  const std::set<Permutation> reps(t.reps.begin(), t.reps.end());
  const auto basis = basis_layers(family, dims, options.perturbation.activation);

  // Which transpositions are excluded by the family's own symmetry.
  std::vector<char> impossible(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) impossible[i * n + j] = declared_group_has(basis.front(), i, j);

  std::size_t reached = 1, edges_checked = 0, edges_found = 0, edges_impossible = 0;
  std::set<Permutation> seen{t.reps.front()};
  std::deque<Permutation> queue{t.reps.front()};
  Rng edge_rng = rng.split(2);
  while (!queue.empty() && reached < reps.size()) {
    const Permutation p = queue.front();
    queue.pop_front();
    const auto chain = chain_of(p);
    for (std::size_t r_pos = 0; r_pos + 1 < n && reached < reps.size(); ++r_pos) {
      const std::size_t i = std::min(chain[r_pos], chain[r_pos + 1]);
      const std::size_t j = std::max(chain[r_pos], chain[r_pos + 1]);
      const Permutation q = compose(p, Permutation::transposition(n, i + 1, j + 1));
      if (seen.count(q)) continue;
      ++edges_checked;
      const EdgeOutcome e = search_edge(family, dims, basis, impossible[i * n + j], chain, i, j, edge_rng,
                                        options.edge_draws, options.perturbation);
      if (e.impossible) ++edges_impossible;
      if (!e.found) continue;
      ++edges_found;
      seen.insert(q);
      queue.push_back(q);
      if (reps.count(q)) ++reached;
    }
  }
  const bool connected = reached == reps.size();

  r.samples = pert.samples + edges_checked;
  r.metrics["transversal_size"] = static_cast<double>(reps.size());
  r.metrics["reached"] = static_cast<double>(reached);
  r.metrics["edges_checked"] = static_cast<double>(edges_checked);
  r.metrics["edges_found"] = static_cast<double>(edges_found);
  r.metrics["edges_impossible"] = static_cast<double>(edges_impossible);
  r.metrics["perturbation_violations"] = static_cast<double>(pert.violations);
  r.metrics["perturbation_filtered"] = pert.metrics.count("filtered") ? pert.metrics.at("filtered") : 0.0;
  for (const auto& w : pert.witnesses) r.record_violation(0.0, "perturbation: " + w);
  r.violations = pert.violations;  // witnesses above are capped; keep the true count
  if (!connected) {
    r.notes.push_back("transversal not connected: reached " + std::to_string(reached) + " of " +
                      std::to_string(reps.size()) + " representatives");
    if (edges_found == 0 && edges_impossible == edges_checked)
      r.notes.push_back("every boundary swap is a symmetry of the family");
    r.record_violation(1.0, "disconnected transversal");
    return r.finalize();
  }
  return r.finalize(true);
}

// --- Counterexamples ---------------------------------------------------------------------------

double min_given_max_floor(std::size_t n) {
  if (n < 2) throw std::invalid_argument("min_given_max_floor: n must be at least 2");
  const double d = static_cast<double>(n);
  return 4.0 * (d - 1.0) / (d * (d + 1.0) * (d + 2.0));
}

namespace {

bool in_q(std::span<const double> x) {
  for (std::size_t i = 0; i + 1 < x.size(); ++i)
    if (!(x[i] > x[i + 1])) return false;
  return true;
}

Vector descending_sample(Rng& rng, std::size_t n) {
  Vector x = general_position_sample(rng, n, -1.0, 1.0);
  std::sort(x.begin(), x.end(), std::greater<>());
  return x;
}

}  // namespace

VerificationReport check_counterexamples(std::uint64_t seed, const CounterexampleOptions& options) {
  const std::size_t n = options.n;
  const std::vector<std::size_t> dims{n};
  VerificationReport r("check_counterexamples", 0.0);
  Rng rng(seed);
  constexpr double eps = std::numeric_limits<double>::epsilon();

  // gamma1: every step adds one increment to all coordinates.
  {
    Rng sub = rng.split(1);
    double worst_ratio = 0.0;
    for (std::size_t s = 0; s < options.schedules; ++s) {
      Schedule sched{{}, 1 + sub.index(50), s % 2 ? Integrator::rk4 : Integrator::euler};
      const std::size_t segments = 1 + sub.index(4);
      for (std::size_t k = 0; k < segments; ++k)
        sched.segments.push_back({ControlLayer(Family::gamma1, dims, {}), sub.uniform(0.1, 2.0)});
      const Vector x = sub.uniform_vector(n, -3.0, 3.0);
      const FlowResult fr = integrate(sched, x, true);
      double scale = 0.0;
      for (const auto& state : fr.trajectory)
        for (double v : state) scale = std::max(scale, std::abs(v));
      // Each step rounds every coordinate once per stage.
      const double stages = sched.integrator == Integrator::rk4 ? 4.0 : 1.0;
      const double bound = 4.0 * stages * static_cast<double>(std::max<std::size_t>(fr.steps, 1)) * eps * scale;
      double gap = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          gap = std::max(gap, std::abs((fr.y[i] - fr.y[j]) - (x[i] - x[j])));
      worst_ratio = std::max(worst_ratio, gap / bound);
      if (gap > bound) r.record_violation(gap, "gamma1 difference drift x=" + format_vector(x));
    }
    r.metrics["gamma1_worst_over_bound"] = worst_ratio;
  }

  // fsmax: Q and the first-coordinate order survive the flow at fine steps.
  {
    Rng sub = rng.split(2);
    std::size_t artifacts = 0;
    for (std::size_t s = 0; s < options.schedules; ++s) {
      Schedule sched = random_schedule(Family::fsmax, dims, 1 + sub.index(4), Activation::tanh, sub, -1.0, 1.0,
                                       Integrator::euler, 10);
      Vector x = descending_sample(sub, n), y = descending_sample(sub, n);
      if (x[0] < y[0]) std::swap(x, y);
      bool ok = false;
      for (int refine = 0; refine < 6 && !ok; ++refine) {
        const Vector px = integrate(sched, x).y, py = integrate(sched, y).y;
        ok = in_q(px) && in_q(py) && px[0] > py[0];
        if (!ok) {
          ++artifacts;
          sched.steps_per_unit_time *= 2;
        }
      }
      if (!ok) r.record_violation(1.0, "fsmax order lost x=" + format_vector(x) + " y=" + format_vector(y));
    }
    r.metrics["fsmax_discretization_artifacts"] = static_cast<double>(artifacts);
  }

  // fs1 must break difference preservation, or the gamma1 check is vacuous.
  {
    Rng sub = rng.split(3);
    double largest = 0.0;
    for (std::size_t s = 0; s < options.schedules; ++s) {
      const Schedule sched = random_schedule(Family::fs1, dims, 2, Activation::tanh, sub, -1.0, 1.0,
                                             Integrator::euler, 10);
      const Vector x = general_position_sample(sub, n, -1.0, 1.0);
      const Vector y = integrate(sched, x).y;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) largest = std::max(largest, std::abs((y[i] - y[j]) - (x[i] - x[j])));
    }
    r.metrics["fs1_largest_drift"] = largest;
    if (!(largest > 1e-6)) r.record_violation(1.0, "fs1 preserved coordinate differences; check is vacuous");
  }

  // fsmax + terminal max predicts min(x) through max(x) only.
  {
    const double floor = min_given_max_floor(n);
    const auto target = register_targets().make("min", dims);
    const Dataset test = sample_dataset(target, n, options.floor_test_samples, 1.0, derive_seed(seed, 40));

    // Monte Carlo confirmation of the floor from the same test set.
    double mc = 0.0;
    {
      // E[min | max] = (max(x) - 1 + (max(x) + 1) / n) ... via the order-statistic mean.
      for (std::size_t k = 0; k < test.size(); ++k) {
        const auto x = test.x(k);
        const double m = *std::max_element(x.begin(), x.end());
        const double conditional_mean = -1.0 + (m + 1.0) / static_cast<double>(n);
        const double e = test.ys[k] - conditional_mean;
        mc += e * e;
      }
      mc /= static_cast<double>(test.size());
    }
    r.metrics["min_floor"] = floor;
    r.metrics["min_floor_monte_carlo"] = mc;
    if (std::abs(mc - floor) > options.floor_margin * floor)
      r.record_violation(std::abs(mc - floor), "Monte Carlo floor disagrees with the closed form");

    double best = std::numeric_limits<double>::infinity();
    ModelSpec spec;
    spec.family = Family::fsmax;
    spec.dims = dims;
    spec.layers = 3;
    spec.terminal = Terminal::max;
    spec.steps_per_unit_time = 10;
    for (std::size_t m = 0; m < options.floor_models; ++m) {
      const Model model = make_model(spec, derive_seed(seed, 100 + m));
      best = std::min(best, loss(model, test).mse);
    }
    if (options.floor_train_iterations > 0) {
      TrainConfig cfg;
      cfg.iterations = options.floor_train_iterations;
      cfg.train_samples = 1024;
      cfg.test_samples = 1024;
      cfg.log_every = options.floor_train_iterations;
      cfg.seed = derive_seed(seed, 41);
      const TrainResult trained = train(make_model(spec, cfg.seed), target, cfg);
      const double trained_mse = loss(trained.model, test).mse;
      r.metrics["min_trained_mse"] = trained_mse;
      best = std::min(best, trained_mse);
    }
    r.metrics["min_best_mse"] = best;
    if (best < (1.0 - options.floor_margin) * floor)
      r.record_violation(floor - best, "fsmax/max model beat the min-from-max floor");
  }
  r.samples = 3 * options.schedules;
  return r.finalize();
}

}  // namespace eqflow
