#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eqflow/perm_group.hpp"
#include "eqflow/random.hpp"

namespace eqflow {

enum class Activation { relu, tanh, sigmoid };

double activate(Activation a, double z);
/// relu'(0) is taken to be 0.
double activate_derivative(Activation a, double z);
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// The layer catalog. Parameter layouts (flat, positional):
///
///   conv1     [w (n taps, row-major), v, b]   v*act(w (*) x + b)
///   conv2     [w (n taps, row-major), v, b]   w (*) act(v*x + b)
///   fs1       [a, w, v, b]                    a*act(w*x + v*sum(x) + b)
///   fs2       [a, b, w, v, c, d]              a*act(w*x + c) + b*sum_j act(v*x_j + d)
///   janossy1  [v, a, b, c]                    v*act(a*x + b*sum_i phi(x_i) + c),      phi = sigmoid
///   janossy2  [v, a, b, c]                    v*act(a*x + b*sum_ij phi(x_i x_j) + c),  phi = sigmoid
///   fsmax     [v, a, b, c]                    v*act(a*x + b*max(x) + c)
///   prod2d_1  [v, w0, wr1, wc1, c]            row / column sums of a 2D grid
///   prod2d_2  [v, w0, wr1, wc1, wr2, wc2, c]  adds squared row / column sums
///   prodkd_1  [v, w0, w_1..w_k, c]            slice sums along each of k axes
///   prodkd_2  [v, w0, w_1..w_k, u_1..u_k, c]  adds squared slice sums
///   gamma1    []                              gamma(x)*1, gamma(x) = well_bump(sum(x))
///   linear    [lambda]                        lambda*x (integrator benchmarks only)
///
/// (*) is periodic cross-correlation with a full-size filter. Every constant
/// term is broadcast along the all-ones vector.
enum class Family { conv1, conv2, fs1, fs2, janossy1, janossy2, fsmax, prod2d_1, prod2d_2, prodkd_1, prodkd_2, gamma1, linear };

std::string to_string(Family f);
Family family_from_string(const std::string& s);
const std::vector<Family>& all_families();
std::size_t param_count(Family f, const std::vector<std::size_t>& dims);

/// Entry j (0-based, row-major multi-index) is sum_k x_{j+k} w_k, indices
/// taken modulo each axis length.
Vector circular_convolution(std::span<const double> w, std::span<const double> x, const std::vector<std::size_t>& dims);
Vector circular_convolution(std::span<const double> w, std::span<const double> x);

/// Slice sums along `axis`: entry i is the sum of x over all multi-indices
/// sharing i's coordinate on that axis. For a 2D grid axis 0 gives row sums.
Vector axis_sums(std::span<const double> x, const std::vector<std::size_t>& dims, std::size_t axis);
/// Squares of axis_sums (the second-order pooled term).
Vector axis_sums_squared(std::span<const double> x, const std::vector<std::size_t>& dims, std::size_t axis);

struct LayerGradient {
  Vector params;
  Vector x;
};

/// One member f_theta of a control family. Immutable after construction.
class ControlLayer {
 public:
  ControlLayer(Family family, std::vector<std::size_t> dims, Vector params, Activation activation = Activation::tanh);

  Family family() const noexcept { return family_; }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t degree() const noexcept { return n_; }
  const Vector& params() const noexcept { return params_; }
  Activation activation() const noexcept { return activation_; }

  Vector eval(std::span<const double> x) const;
  /// Writes f(x) into `out` (size n). `out` must not alias `x`. A non-empty
  /// `cache` (size 2 * activation_points()) receives each activation value
  /// and slope for a later vjp_into at the same x.
  void eval_into(std::span<const double> x, std::span<double> out, std::span<double> cache = {}) const;
  /// Number of activation evaluations f makes (the cache holds two doubles each).
  std::size_t activation_points() const noexcept;

  LayerGradient vjp(std::span<const double> x, std::span<const double> cotangent) const;
  /// Adds d<c, f(x)>/dtheta to `grad_params` and writes d<c, f(x)>/dx into `grad_x`.
  /// `cache`, when non-empty, must come from eval_into at the same x.
  void vjp_into(std::span<const double> x, std::span<const double> cotangent, std::span<double> grad_params,
                std::span<double> grad_x, std::span<const double> cache = {}) const;

  ControlLayer with_params(Vector params) const;

  /// Group record of the symmetry the family is built for.
  std::string declared_group() const;

  /// "family dims activation p1 p2 ..." with dims written as 2x3.
  std::string serialize() const;
  static ControlLayer parse(const std::string& record);

 private:
  void require_input(std::span<const double> x) const;

  Family family_;
  std::vector<std::size_t> dims_;
  std::size_t n_ = 0;
  Vector params_;
  Activation activation_;
  /// shift_[j*n + k] = flat index of (j + k) for periodic convolution.
  std::vector<std::size_t> shift_;
  /// coord_[axis*n + i] = i's coordinate on `axis`.
  std::vector<std::size_t> coord_;
};

using ScalarField = std::function<double(std::span<const double>)>;

/// x -> [f(x)]_1.
ScalarField coor_representative(const ControlLayer& layer);

/// The group built from layer.declared_group().
PermGroup declared_group(const ControlLayer& layer);

/// Layer with parameters drawn uniformly from [lo, hi].
ControlLayer random_layer(Family family, const std::vector<std::size_t>& dims, Activation activation, Rng& rng,
                          double lo = -1.0, double hi = 1.0);

std::string format_dims(const std::vector<std::size_t>& dims);
std::vector<std::size_t> parse_dims(const std::string& text);

}  // namespace eqflow
