#include <cmath>
#include <limits>

#include "doctest.h"
#include "eqflow/control_families.hpp"
#include "eqflow/verify.hpp"
#include "eqflow/well_functions.hpp"

using namespace eqflow;

namespace {

std::vector<std::size_t> dims_for(Family f) {
  switch (f) {
    case Family::prod2d_1:
    case Family::prod2d_2:
    case Family::prodkd_1:
    case Family::prodkd_2: return {2, 3};
    default: return {4};
  }
}

/// Largest relative disagreement between the layer VJP and central differences.
double vjp_fd_error(const ControlLayer& layer, const Vector& x, const Vector& c, double h = 1e-5) {
  const auto g = layer.vjp(x, c);
  auto dot = [&](const ControlLayer& l, const Vector& at) {
    const Vector y = l.eval(at);
    double s = 0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * c[i];
    return s;
  };
  double diff = 0, norm = 0;
  const Vector& theta = layer.params();
  for (std::size_t k = 0; k < theta.size(); ++k) {
    Vector p = theta, m = theta;
    p[k] += h;
    m[k] -= h;
    const double fd = (dot(layer.with_params(p), x) - dot(layer.with_params(m), x)) / (2 * h);
    diff = std::max(diff, std::abs(fd - g.params[k]));
    norm = std::max(norm, std::abs(fd));
  }
  for (std::size_t k = 0; k < x.size(); ++k) {
    Vector p = x, m = x;
    p[k] += h;
    m[k] -= h;
    const double fd = (dot(layer, p) - dot(layer, m)) / (2 * h);
    diff = std::max(diff, std::abs(fd - g.x[k]));
    norm = std::max(norm, std::abs(fd));
  }
  return diff / std::max(norm, 1e-8);
}

}  // namespace

TEST_SUITE("control_families") {
  TEST_CASE("activations are 1-Lipschitz") {
    Rng rng(3);
    for (auto a : {Activation::relu, Activation::tanh, Activation::sigmoid})
      for (int k = 0; k < 2000; ++k) {
        const double u = rng.uniform(-6, 6), v = rng.uniform(-6, 6);
        REQUIRE(std::abs(activate(a, u) - activate(a, v)) <= std::abs(u - v) + 1e-15);
        REQUIRE(std::abs(activate_derivative(a, u)) <= 1.0);
      }
    CHECK(activate_derivative(Activation::relu, 0.0) == 0.0);
    CHECK(activate(Activation::tanh, 0.3) == doctest::Approx(std::tanh(0.3)).epsilon(1e-15));
    CHECK(activate(Activation::tanh, 50.0) == 1.0);
    CHECK(activate(Activation::tanh, -50.0) == -1.0);
  }

  TEST_CASE("circular convolution") {
    const Vector x{2, 3, 5};
    CHECK(circular_convolution(Vector{0, 1, 0}, x) == Vector{3, 5, 2});
    CHECK(circular_convolution(Vector{1, 0, 0}, x) == x);
    const Vector grid{1, 2, 3, 4, 5, 6};
    CHECK(circular_convolution(Vector{1, 0, 0, 0, 0, 0}, grid, {2, 3}) == grid);
    // Unit filter at (1, 0) reads the next row.
    CHECK(circular_convolution(Vector{0, 0, 0, 1, 0, 0}, grid, {2, 3}) == Vector{4, 5, 6, 1, 2, 3});
    CHECK_THROWS(circular_convolution(Vector{1, 0}, x));
  }

  TEST_CASE("pooled sums on a grid") {
    const Vector x{1, 2, 3, 4};
    CHECK(axis_sums(x, {2, 2}, 0) == Vector{3, 3, 7, 7});
    CHECK(axis_sums(x, {2, 2}, 1) == Vector{4, 6, 4, 6});
    CHECK(axis_sums_squared(x, {2, 2}, 0) == Vector{9, 9, 49, 49});
  }

  TEST_CASE("evaluation examples") {
    const ControlLayer zero(Family::fs1, {3}, {1, 0, 0, 0}, Activation::relu);
    CHECK(zero.eval(std::vector<double>{4, -2, 7}) == Vector{0, 0, 0});

    const ControlLayer fs1(Family::fs1, {3}, {2, 0.5, -0.25, 0.1}, Activation::tanh);
    const Vector x{0.3, -0.7, 0.2};
    const double s = x[0] + x[1] + x[2];
    CHECK(fs1.eval(x)[1] == doctest::Approx(2 * std::tanh(0.5 * x[1] - 0.25 * s + 0.1)));

    const ControlLayer fsmax(Family::fsmax, {3}, {1.5, 0.5, -1, 0.2}, Activation::tanh);
    CHECK(fsmax.eval(x)[2] == doctest::Approx(1.5 * std::tanh(0.5 * x[2] - 1 * 0.3 + 0.2)));

    const ControlLayer gamma(Family::gamma1, {3}, {});
    const Vector far{1, 1, 1};
    CHECK(gamma.eval(far) == Vector{2, 2, 2});
    CHECK(gamma.eval(x) == Vector{0, 0, 0});

    const ControlLayer lin(Family::linear, {2}, {-2});
    CHECK(lin.eval(std::vector<double>{1, 3}) == Vector{-2, -6});
  }

  TEST_CASE("parameter layouts match the formulas") {
    const Vector x{0.3, -0.7, 0.2};
    auto sig = [](double z) { return 1 / (1 + std::exp(-z)); };
    const ControlLayer fs2(Family::fs2, {3}, {0.5, -1.2, 0.7, 1.1, 0.1, -0.3}, Activation::tanh);
    double pooled = 0;
    for (double xi : x) pooled += std::tanh(1.1 * xi - 0.3);
    CHECK(fs2.eval(x)[0] == doctest::Approx(0.5 * std::tanh(0.7 * x[0] + 0.1) - 1.2 * pooled));

    const ControlLayer j1(Family::janossy1, {3}, {0.9, 0.4, -0.6, 0.05}, Activation::tanh);
    double p1 = 0;
    for (double xi : x) p1 += sig(xi);
    CHECK(j1.eval(x)[1] == doctest::Approx(0.9 * std::tanh(0.4 * x[1] - 0.6 * p1 + 0.05)));

    const ControlLayer j2(Family::janossy2, {3}, {0.9, 0.4, -0.6, 0.05}, Activation::tanh);
    double p2 = 0;
    for (double xi : x)
      for (double xj : x) p2 += sig(xi * xj);
    CHECK(j2.eval(x)[2] == doctest::Approx(0.9 * std::tanh(0.4 * x[2] - 0.6 * p2 + 0.05)));

    const ControlLayer conv2(Family::conv2, {3}, {0.2, -0.4, 0.6, 1.3, 0.1}, Activation::tanh);
    const Vector act{std::tanh(1.3 * x[0] + 0.1), std::tanh(1.3 * x[1] + 0.1), std::tanh(1.3 * x[2] + 0.1)};
    CHECK(conv2.eval(x)[0] == doctest::Approx(0.2 * act[0] - 0.4 * act[1] + 0.6 * act[2]));

    const Vector g{1, 2, 3, 4, 5, 6};
    const ControlLayer p1d(Family::prod2d_1, {2, 3}, {1, 0.5, 0.1, -0.2, 0.3}, Activation::tanh);
    // Entry (0, 1): row sum 6, column sum 7.
    CHECK(p1d.eval(g)[1] == doctest::Approx(std::tanh(0.5 * 2 + 0.1 * 6 - 0.2 * 7 + 0.3)));
    const ControlLayer p2d(Family::prod2d_2, {2, 3}, {1, 0.5, 0.1, -0.2, 0.01, 0.02, 0.3}, Activation::tanh);
    CHECK(p2d.eval(g)[1] == doctest::Approx(std::tanh(0.5 * 2 + 0.1 * 6 - 0.2 * 7 + 0.01 * 36 + 0.02 * 49 + 0.3)));
    const ControlLayer pk(Family::prodkd_1, {2, 3}, {1, 0.5, 0.1, -0.2, 0.3}, Activation::tanh);
    CHECK(pk.eval(g) == p1d.eval(g));
  }

  TEST_CASE("construction errors") {
    CHECK_THROWS_AS(ControlLayer(Family::fs1, {3}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(ControlLayer(Family::fs1, {3}, {1, 0, std::numeric_limits<double>::quiet_NaN(), 0}),
                    std::domain_error);
    CHECK_THROWS_AS(ControlLayer(Family::prod2d_1, {6}, {1, 0, 0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(ControlLayer(Family::fs1, {2, 3}, {1, 0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(ControlLayer(Family::conv1, {0}, {0, 0}), std::invalid_argument);
    const ControlLayer ok(Family::fs1, {3}, {1, 0, 0, 0});
    CHECK_THROWS_AS(ok.eval(std::vector<double>{1, 2}), std::invalid_argument);
  }

  TEST_CASE("coor representatives") {
    const Vector x{0.4, -0.1, 0.8};
    const ControlLayer fs1(Family::fs1, {3}, {1.2, 0.3, -0.5, 0.2});
    CHECK(coor_representative(fs1)(x) == doctest::Approx(1.2 * std::tanh(0.3 * 0.4 - 0.5 * 1.1 + 0.2)));
    const ControlLayer gamma(Family::gamma1, {3}, {});
    const Vector far{2, 2, 2};
    CHECK(coor_representative(gamma)(far) == sym_well_sum(well_bump_function(), 3)(far));
    const ControlLayer conv(Family::conv1, {3}, {1, 0, 0, 0.7, -0.2});
    CHECK(coor_representative(conv)(x) == doctest::Approx(0.7 * std::tanh(0.4 - 0.2)));
  }

  TEST_CASE("coor representatives are invariant under stab_1") {
    Rng rng(8);
    const PermGroup stab = stabilizer(symmetric_group(4), 1);
    for (Family f : {Family::fs1, Family::fs2, Family::janossy1, Family::janossy2, Family::fsmax, Family::gamma1}) {
      CAPTURE(to_string(f));
      const auto r = check_invariance(coor_representative(random_layer(f, {4}, Activation::tanh, rng)), stab, 200,
                                      1e-12, 9);
      CHECK(r.passed());
    }
  }

  TEST_CASE("declared groups") {
    CHECK(ControlLayer(Family::conv1, {3}, Vector(5, 0.0)).declared_group() == "translation_1d 3");
    CHECK(ControlLayer(Family::conv2, {2, 3}, Vector(8, 0.0)).declared_group() == "translation_nd 2 3");
    CHECK(ControlLayer(Family::fs1, {5}, Vector(4, 0.0)).declared_group() == "symmetric 5");
    CHECK(ControlLayer(Family::prod2d_1, {2, 3}, Vector(5, 0.0)).declared_group() == "product 2 3");
  }

  TEST_CASE("every family is exactly equivariant under its declared group") {
    for (Family f : all_families()) {
      CAPTURE(to_string(f));
      const auto r = check_family_equivariance(f, dims_for(f), 200, 21);
      CHECK(r.passed());
      CHECK(r.metrics.at("layer_worst") <= 1e-12);
    }
  }

  TEST_CASE("symmetric families are equivariant under the translation subgroup") {
    Rng rng(4);
    const PermGroup t = translation_group_1d(5);
    for (Family f : {Family::fs1, Family::fs2, Family::janossy1, Family::janossy2, Family::fsmax}) {
      const ControlLayer layer = random_layer(f, {5}, Activation::tanh, rng);
      CHECK(check_equivariance([&](std::span<const double> x) { return layer.eval(x); }, t, 100, 1e-12, 5).passed());
    }
  }

  TEST_CASE("vjp matches central differences") {
    Rng rng(12);
    for (Family f : all_families())
      for (Activation a : {Activation::tanh, Activation::sigmoid, Activation::relu}) {
        CAPTURE(to_string(f));
        CAPTURE(to_string(a));
        int misses = 0;
        for (int k = 0; k < 100; ++k) {
          const ControlLayer layer = random_layer(f, dims_for(f), a, rng);
          const Vector x = rng.uniform_vector(layer.degree(), -1, 1);
          const Vector c = rng.uniform_vector(layer.degree(), -1, 1);
          misses += !(vjp_fd_error(layer, x, c) < 1e-5);
        }
        // relu is differentiable only away from its kink, which a difference step can straddle.
        CHECK(misses <= (a == Activation::relu ? 10 : 0));
      }
  }

  TEST_CASE("vjp edge cases") {
    Rng rng(2);
    const ControlLayer layer = random_layer(Family::conv1, {4}, Activation::tanh, rng);
    const auto g = layer.vjp(Vector{0.1, 0.2, 0.3, 0.4}, Vector(4, 0.0));
    CHECK(g.params == Vector(layer.params().size(), 0.0));
    CHECK(g.x == Vector(4, 0.0));
    // The cached path reproduces the uncached one bit for bit.
    const Vector x{0.3, -0.2, 0.9, 0.1}, c{1, -1, 0.5, 2};
    Vector out(4), cache(2 * layer.activation_points());
    layer.eval_into(x, out, cache);
    Vector gp1(layer.params().size(), 0.0), gp2 = gp1, gx1(4), gx2(4);
    layer.vjp_into(x, c, gp1, gx1);
    layer.vjp_into(x, c, gp2, gx2, cache);
    CHECK(gp1 == gp2);
    CHECK(gx1 == gx2);
  }

  TEST_CASE("serialization round trip") {
    Rng rng(6);
    for (Family f : all_families()) {
      const ControlLayer layer = random_layer(f, dims_for(f), Activation::sigmoid, rng);
      const ControlLayer back = ControlLayer::parse(layer.serialize());
      CHECK(back.family() == f);
      CHECK(back.dims() == layer.dims());
      CHECK(back.params() == layer.params());
      CHECK(back.activation() == Activation::sigmoid);
    }
    CHECK_THROWS(ControlLayer::parse("fs9 3 tanh 1 2 3 4"));
    CHECK_THROWS(ControlLayer::parse("fs1 3 tanh 1 2"));
  }
}
