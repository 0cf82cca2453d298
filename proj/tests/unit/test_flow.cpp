#include <cmath>

#include "doctest.h"
#include "eqflow/flow.hpp"
#include "eqflow/verify.hpp"

using namespace eqflow;

namespace {

Schedule linear_schedule(double lambda, std::size_t n, Integrator integ, std::size_t spu, double duration = 1.0) {
  return Schedule{{{ControlLayer(Family::linear, {n}, {lambda}), duration}}, spu, integ};
}

double inf_dist(const Vector& a, const Vector& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("single steps") {
    const ControlLayer id(Family::linear, {1}, {1.0});
    CHECK(euler_step(id, Vector{1.0}, 0.1)[0] == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(euler_step(id, Vector{1.0}, 0.0) == Vector{1.0});
    const ControlLayer zero(Family::linear, {3}, {0.0});
    CHECK(euler_step(zero, Vector{1, 2, 3}, 5.0) == Vector{1, 2, 3});
    CHECK(rk4_step(id, Vector{1.0}, 0.0) == Vector{1.0});
    CHECK(std::abs(rk4_step(id, Vector{1.0}, 1.0)[0] - std::exp(1.0)) < 1e-2);
    CHECK(std::abs(integrate(linear_schedule(1, 1, Integrator::rk4, 100), Vector{1.0}).y[0] - std::exp(1.0)) < 1e-8);
    CHECK_THROWS_AS(euler_step(id, Vector{1.0}, -0.1), std::invalid_argument);
    CHECK_THROWS_AS(rk4_step(id, Vector{1.0}, -0.1), std::invalid_argument);
  }

  TEST_CASE("rk4 agrees with euler to second order in the step") {
    Rng rng(3);
    const ControlLayer layer = random_layer(Family::fs1, {4}, Activation::tanh, rng);
    const Vector x = rng.uniform_vector(4, -1, 1);
    const double d1 = inf_dist(euler_step(layer, x, 1e-2), rk4_step(layer, x, 1e-2));
    const double d2 = inf_dist(euler_step(layer, x, 5e-3), rk4_step(layer, x, 5e-3));
    CHECK(d2 > 0.0);
    CHECK(std::log2(d1 / d2) == doctest::Approx(2.0).epsilon(0.05));
  }

  TEST_CASE("integration basics") {
    const Vector x{1, 2, 3};
    CHECK(integrate(Schedule{}, x).y == x);
    CHECK(integrate(linear_schedule(0, 3, Integrator::euler, 10), x).y == x);
    const auto traj = integrate(linear_schedule(1, 3, Integrator::euler, 10, 0.35), x, true);
    CHECK(traj.steps == 4);
    CHECK(traj.trajectory.size() == 5);
    CHECK(traj.trajectory.front() == x);
    CHECK_THROWS(integrate(linear_schedule(1, 2, Integrator::euler, 10), x));
  }

  TEST_CASE("substep count rounds up") {
    Schedule s = linear_schedule(1, 1, Integrator::euler, 10, 0.35);
    CHECK(s.steps_for(0.35) == 4);
    CHECK(s.steps_for(0.3) == 3);
    CHECK(s.steps_for(0.0) == 0);
    s.segments.push_back({ControlLayer(Family::linear, {1}, {2.0}), 1.0});
    CHECK(s.total_steps() == 14);
  }

  TEST_CASE("schedule validation") {
    Schedule s = linear_schedule(1, 3, Integrator::euler, 10);
    s.segments[0].duration = -1;
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = linear_schedule(1, 3, Integrator::euler, 0);
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = linear_schedule(1, 3, Integrator::euler, 10);
    s.segments.push_back({ControlLayer(Family::linear, {4}, {1.0}), 1.0});
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
    s = linear_schedule(1, 3, Integrator::euler, 10);
    s.segments.push_back({ControlLayer(Family::conv1, {3}, Vector(5, 0.0)), 1.0});
    CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  }

  TEST_CASE("blow-up is reported") {
    try {
      integrate(linear_schedule(40, 2, Integrator::euler, 1, 10.0), Vector{1, 1});
      FAIL("expected a blow-up");
    } catch (const FlowBlowUp& e) {
      CHECK(e.step() > 0);
    }
  }

  TEST_CASE("gamma1 flows move every coordinate by the same amount") {
    // Dyadic data: every increment and sum is exact, so differences survive bit for bit.
    Schedule s{{{ControlLayer(Family::gamma1, {3}, {}), 1.0}, {ControlLayer(Family::gamma1, {3}, {}), 0.5}}, 2,
               Integrator::euler};
    const Vector x{4, 2, 1};
    const Vector y = integrate(s, x).y;
    CHECK(y[0] - y[1] == x[0] - x[1]);
    CHECK(y[1] - y[2] == x[1] - x[2]);
    CHECK(y[0] != x[0]);
  }

  TEST_CASE("inverse flow round trip") {
    const Vector x{1.0, 0.5};
    const auto zero = linear_schedule(0, 2, Integrator::euler, 10);
    CHECK(inverse_integrate(zero, integrate(zero, x).y) == x);
    const auto e = linear_schedule(1, 2, Integrator::euler, 1000);
    CHECK(inf_dist(inverse_integrate(e, integrate(e, x).y), x) < 1e-3);
    const auto r = linear_schedule(1, 2, Integrator::rk4, 100);
    CHECK(inf_dist(inverse_integrate(r, integrate(r, x).y), x) < 1e-9);
    // Refinement shrinks the round-trip error.
    const auto coarse = linear_schedule(1, 2, Integrator::euler, 100);
    CHECK(inf_dist(inverse_integrate(coarse, integrate(coarse, x).y), x) >
          inf_dist(inverse_integrate(e, integrate(e, x).y), x));
  }

  TEST_CASE("observed orders on the linear benchmark") {
    const Vector x{1.0, 0.5};
    const Vector exact{std::exp(1.0), 0.5 * std::exp(1.0)};
    const auto eu = refinement_study(linear_schedule(1, 2, Integrator::euler, 10), x, 4, exact);
    const auto rk = refinement_study(linear_schedule(1, 2, Integrator::rk4, 10), x, 4, exact);
    REQUIRE(eu.orders().size() == 3);
    REQUIRE(rk.orders().size() == 3);
    for (double p : eu.orders()) CHECK((p >= 0.8 && p <= 1.2));
    for (double p : rk.orders()) CHECK((p >= 3.5 && p <= 4.5));
    for (std::size_t l = 0; l + 1 < eu.rows.size(); ++l) CHECK(eu.rows[l + 1].error < eu.rows[l].error);
    for (std::size_t l = 0; l + 1 < rk.rows.size(); ++l) CHECK(rk.rows[l + 1].error < rk.rows[l].error);
  }

  TEST_CASE("observed orders without a reference") {
    Rng rng(2);
    Schedule s = random_schedule(Family::fs1, {3}, 2, Activation::tanh, rng, -1, 1, Integrator::euler, 10);
    const Vector x{0.3, -0.5, 0.8};
    const auto eu = refinement_study(s, x, 5);
    CHECK(eu.rows.size() == 4);
    CHECK(eu.orders().size() == 3);
    for (double p : eu.orders()) CHECK((p >= 0.8 && p <= 1.2));
    s.integrator = Integrator::rk4;
    for (double p : refinement_study(s, x, 5).orders()) CHECK((p >= 3.5 && p <= 4.5));
  }

  TEST_CASE("zero field refinement is exact") {
    const auto st = refinement_study(linear_schedule(0, 2, Integrator::rk4, 10), Vector{1, 2}, 4, Vector{1, 2});
    CHECK(st.exact);
    CHECK(st.orders().empty());
    CHECK_THROWS(refinement_study(linear_schedule(1, 2, Integrator::rk4, 10), Vector{1, 2}, 2));
  }

  TEST_CASE("composition closure") {
    Rng rng(7);
    for (Integrator integ : {Integrator::euler, Integrator::rk4}) {
      const Schedule a = random_schedule(Family::conv1, {4}, 2, Activation::tanh, rng, -1, 1, integ, 20);
      const Schedule b = random_schedule(Family::conv1, {4}, 3, Activation::tanh, rng, -1, 1, integ, 20);
      const Vector x = rng.uniform_vector(4, -1, 1);
      CHECK(integrate(concatenate(a, b), x).y == integrate(b, integrate(a, x).y).y);
    }
  }

  TEST_CASE("flow equivariance for every family") {
    for (Family f : all_families()) {
      const std::vector<std::size_t> dims =
          f == Family::prod2d_1 || f == Family::prod2d_2 || f == Family::prodkd_1 || f == Family::prodkd_2
              ? std::vector<std::size_t>{2, 3}
              : std::vector<std::size_t>{5};
      CAPTURE(to_string(f));
      const auto r = check_family_equivariance(f, dims, 100, 17);
      CHECK(r.metrics.at("flow_worst") <= 1e-10);
    }
  }

  TEST_CASE("gradients") {
    Rng rng(9);
    const Schedule s = random_schedule(Family::fs2, {3}, 2, Activation::tanh, rng, -1, 1, Integrator::rk4, 10);
    const Vector x{0.1, 0.7, -0.4};
    const auto zero = flow_vjp(s, x, Vector(3, 0.0));
    for (const auto& g : zero.params) CHECK(g == Vector(g.size(), 0.0));
    CHECK(zero.x == Vector(3, 0.0));

    // One Euler step: d<c, x + t f(x)> = c + t J^T c and t dθ<c, f(x)>.
    const ControlLayer layer = random_layer(Family::janossy1, {3}, Activation::tanh, rng);
    const double t = 0.25;
    const Schedule one{{{layer, t}}, 4, Integrator::euler};
    const Vector c{0.5, -1.0, 2.0};
    const auto g = flow_vjp(one, x, c);
    const auto lg = layer.vjp(x, c);
    for (std::size_t k = 0; k < lg.params.size(); ++k) CHECK(g.params[0][k] == doctest::Approx(t * lg.params[k]));
    for (std::size_t i = 0; i < 3; ++i) CHECK(g.x[i] == doctest::Approx(c[i] + t * lg.x[i]));

    for (Family f : all_families()) {
      CAPTURE(to_string(f));
      const std::vector<std::size_t> dims =
          f == Family::prod2d_1 || f == Family::prod2d_2 || f == Family::prodkd_1 || f == Family::prodkd_2
              ? std::vector<std::size_t>{2, 2}
              : std::vector<std::size_t>{3};
      const auto r = check_flow_gradient(f, dims, 20, 31);
      CHECK(r.passed());
    }
  }

  TEST_CASE("workspace matches flow_vjp") {
    Rng rng(10);
    for (Integrator integ : {Integrator::euler, Integrator::rk4}) {
      const Schedule s = random_schedule(Family::conv2, {4}, 3, Activation::sigmoid, rng, -1, 1, integ, 7);
      const Vector x = rng.uniform_vector(4, -1, 1), c = rng.uniform_vector(4, -1, 1);
      FlowWorkspace ws;
      ws.forward(s, x);
      const Vector y = integrate(s, x).y;
      CHECK(Vector(ws.terminal().begin(), ws.terminal().end()) == y);
      Vector gp(s.param_count(), 0.0), gx(4);
      ws.backward(s, c, gp, gx);
      const auto ref = flow_vjp(s, x, c);
      Vector flat;
      for (const auto& p : ref.params) flat.insert(flat.end(), p.begin(), p.end());
      CHECK(gp == flat);
      CHECK(gx == ref.x);
    }
  }

  TEST_CASE("schedule serialization round trip") {
    Rng rng(4);
    Schedule s = random_schedule(Family::prod2d_2, {2, 3}, 3, Activation::tanh, rng, -1, 1, Integrator::rk4, 13);
    s.segments[1].duration = 0.3;
    const Schedule back = Schedule::parse(s.serialize());
    CHECK(back.serialize() == s.serialize());
    CHECK(back.integrator == Integrator::rk4);
    CHECK(back.steps_per_unit_time == 13);
    const Vector x = rng.uniform_vector(6, -1, 1);
    CHECK(integrate(back, x).y == integrate(s, x).y);
    CHECK_THROWS(Schedule::parse("schedule euler 10 2\n1 fs1 3 tanh 0 0 0 0\n"));
    CHECK(s.with_flat_params(s.flat_params()).serialize() == s.serialize());
  }
}
