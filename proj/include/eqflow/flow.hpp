#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqflow/control_families.hpp"

namespace eqflow {

enum class Integrator { euler, rk4 };

std::string to_string(Integrator i);
Integrator integrator_from_string(const std::string& s);

struct Segment {
  ControlLayer layer;
  double duration = 1.0;
};

inline constexpr std::size_t default_steps_per_unit_time = 100;
inline constexpr double blow_up_threshold = 1e8;

/// Piecewise-constant control: segments are applied first to last.
struct Schedule {
  std::vector<Segment> segments;
  std::size_t steps_per_unit_time = default_steps_per_unit_time;
  Integrator integrator = Integrator::euler;

  /// Throws std::invalid_argument unless durations are finite and >= 0,
  /// steps_per_unit_time > 0, and all layers share degree and declared group.
  void validate() const;
  /// Degree of the first layer, or 0 for an empty schedule.
  std::size_t degree() const;
  /// ceil(duration * steps_per_unit_time).
  std::size_t steps_for(double duration) const;
  std::size_t total_steps() const;

  std::size_t param_count() const;
  /// All layer parameters, segment by segment.
  Vector flat_params() const;
  Schedule with_flat_params(std::span<const double> params) const;

  /// Header "schedule <integrator> <steps_per_unit_time> <count>" followed by
  /// one "<duration> <layer record>" line per segment.
  std::string serialize() const;
  static Schedule parse(const std::string& text);
};

/// Appends the segments of `b` after those of `a`; settings come from `a`.
Schedule concatenate(const Schedule& a, const Schedule& b);

/// `layers` unit-duration segments with independent random parameters.
Schedule random_schedule(Family family, const std::vector<std::size_t>& dims, std::size_t layers, Activation act,
                         Rng& rng, double lo = -1.0, double hi = 1.0, Integrator integrator = Integrator::euler,
                         std::size_t steps_per_unit_time = default_steps_per_unit_time);

/// Raised when a state leaves the finite ball of radius blow_up_threshold.
class FlowBlowUp : public std::runtime_error {
 public:
  FlowBlowUp(std::size_t step, const std::string& what) : std::runtime_error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

struct FlowResult {
  Vector y;
  /// Every state including the initial one, when requested.
  std::vector<Vector> trajectory;
  std::size_t steps = 0;
};

/// x + t f(x).
Vector euler_step(const ControlLayer& layer, std::span<const double> x, double t);
/// Classical four-stage Runge-Kutta step.
Vector rk4_step(const ControlLayer& layer, std::span<const double> x, double t);

FlowResult integrate(const Schedule& schedule, std::span<const double> x, bool record_trajectory = false);
/// Integrates -f over the segments in reverse order.
Vector inverse_integrate(const Schedule& schedule, std::span<const double> y);

struct RefinementRow {
  std::size_t steps_per_unit_time = 0;
  std::size_t total_steps = 0;
  /// Distance to the reference (or to the next finer level).
  double error = 0.0;
  /// Observed order against the next row; NaN on the last row(s).
  double order = 0.0;
};

struct RefinementStudy {
  std::vector<RefinementRow> rows;
  /// True when every error is exactly zero.
  bool exact = false;
  /// True when errors are measured against a supplied exact solution.
  bool has_reference = false;
  std::vector<double> orders() const;
};

/// Integrates at steps_per_unit_time N, 2N, 4N, ... (`levels` levels, N from
/// the schedule). With `reference`, errors are ||y_N - reference||_inf and
/// every consecutive pair yields an order. Without it, errors are the
/// successive differences ||y_N - y_2N||_inf, giving levels-1 errors and
/// levels-2 orders.
RefinementStudy refinement_study(const Schedule& schedule, std::span<const double> x, std::size_t levels,
                                 std::optional<Vector> reference = std::nullopt);

struct FlowGradient {
  /// One gradient per segment, laid out like that segment's parameters.
  std::vector<Vector> params;
  Vector x;
};

/// Reverse-mode gradient of <cotangent, integrate(schedule, x).y>, exact for
/// the discrete scheme.
FlowGradient flow_vjp(const Schedule& schedule, std::span<const double> x, std::span<const double> cotangent);

namespace detail {
/// Stage scratch for one integrator step.
struct StepBuffers {
  Vector k1, k2, k3, k4, u;
  void resize(std::size_t n) {
    for (auto* v : {&k1, &k2, &k3, &k4, &u}) v->assign(n, 0.0);
  }
};
}  // namespace detail

/// Reusable buffers for batched forward/backward passes.
class FlowWorkspace {
 public:
  /// Runs the forward pass and keeps every state.
  void forward(const Schedule& schedule, std::span<const double> x);
  std::span<const double> terminal() const;
  /// Adds the parameter gradient (flat, segment by segment) into
  /// `grad_params` and writes the input gradient into `grad_x`.
  void backward(const Schedule& schedule, std::span<const double> cotangent, std::span<double> grad_params,
                std::span<double> grad_x);

 private:
  std::size_t n_ = 0;
  std::size_t steps_ = 0;
  Vector states_;
  /// Per segment: substep count, substep size, parameter offset.
  struct Plan {
    std::size_t steps;
    double h;
    std::size_t offset;
  };
  std::vector<Plan> plan_;
  detail::StepBuffers buffers_;
  /// Euler only: activation values and slopes of every step, for backward().
  Vector cache_;
  std::size_t cache_stride_ = 0;
  std::span<double> step_cache(std::size_t step, const ControlLayer& layer);
  Vector k1_, k2_, k3_, k4_, u_, adj_, gx_, kbar1_, kbar2_, kbar3_, kbar4_;
};

}  // namespace eqflow
