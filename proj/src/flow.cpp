#include "eqflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace eqflow {

std::string to_string(Integrator i) { return i == Integrator::euler ? "euler" : "rk4"; }

Integrator integrator_from_string(const std::string& s) {
  if (s == "euler") return Integrator::euler;
  if (s == "rk4") return Integrator::rk4;
  throw std::invalid_argument("unknown integrator '" + s + "'");
}

// --- Schedule --------------------------------------------------------------------

void Schedule::validate() const {
  if (steps_per_unit_time == 0) throw std::invalid_argument("schedule: steps_per_unit_time must be positive");
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto& seg = segments[s];
    if (!std::isfinite(seg.duration) || seg.duration < 0.0)
      throw std::invalid_argument("schedule: segment " + std::to_string(s) + " has invalid duration");
    if (seg.layer.degree() != segments.front().layer.degree())
      throw std::invalid_argument("schedule: segment " + std::to_string(s) + " has a different degree");
    if (seg.layer.declared_group() != segments.front().layer.declared_group())
      throw std::invalid_argument("schedule: segment " + std::to_string(s) + " has a different declared group");
  }
}

std::size_t Schedule::degree() const { return segments.empty() ? 0 : segments.front().layer.degree(); }

std::size_t Schedule::steps_for(double duration) const {
  const double exact = duration * static_cast<double>(steps_per_unit_time);
  const double rounded = std::nearbyint(exact);
  // Durations such as 0.3 carry rounding noise; absorb it before ceil.
  if (std::abs(exact - rounded) <= 1e-9 * std::max(1.0, exact)) return static_cast<std::size_t>(rounded);
  return static_cast<std::size_t>(std::ceil(exact));
}

std::size_t Schedule::total_steps() const {
  std::size_t total = 0;
  for (const auto& seg : segments) total += steps_for(seg.duration);
  return total;
}

std::size_t Schedule::param_count() const {
  std::size_t total = 0;
  for (const auto& seg : segments) total += seg.layer.params().size();
  return total;
}

Vector Schedule::flat_params() const {
  Vector out;
  out.reserve(param_count());
  for (const auto& seg : segments) out.insert(out.end(), seg.layer.params().begin(), seg.layer.params().end());
  return out;
}

Schedule Schedule::with_flat_params(std::span<const double> params) const {
  if (params.size() != param_count()) throw std::invalid_argument("schedule: parameter count mismatch");
  Schedule out{{}, steps_per_unit_time, integrator};
  out.segments.reserve(segments.size());
  std::size_t offset = 0;
  for (const auto& seg : segments) {
    const std::size_t k = seg.layer.params().size();
    out.segments.push_back({seg.layer.with_params(Vector(params.begin() + static_cast<std::ptrdiff_t>(offset),
                                                         params.begin() + static_cast<std::ptrdiff_t>(offset + k))),
                            seg.duration});
    offset += k;
  }
  return out;
}

std::string Schedule::serialize() const {
  std::string out = "schedule " + to_string(integrator) + " " + std::to_string(steps_per_unit_time) + " " +
                    std::to_string(segments.size()) + "\n";
  char buf[40];
  for (const auto& seg : segments) {
    std::snprintf(buf, sizeof buf, "%.17g ", seg.duration);
    out += buf + seg.layer.serialize() + "\n";
  }
  return out;
}

Schedule Schedule::parse(const std::string& text) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header)) throw std::invalid_argument("schedule record is empty");
  std::istringstream hs(header);
  std::string tag, integrator;
  long long spu = 0, count = 0;
  if (!(hs >> tag >> integrator >> spu >> count) || tag != "schedule" || spu <= 0 || count < 0)
    throw std::invalid_argument("bad schedule header '" + header + "'");
  Schedule s{{}, static_cast<std::size_t>(spu), integrator_from_string(integrator)};
  std::string line;
  while (static_cast<long long>(s.segments.size()) < count && std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string duration;
    ls >> duration;
    char* end = nullptr;
    const double d = std::strtod(duration.c_str(), &end);
    if (end == duration.c_str() || *end != '\0') throw std::invalid_argument("bad segment duration '" + duration + "'");
    std::string rest;
    std::getline(ls, rest);
    s.segments.push_back({ControlLayer::parse(rest), d});
  }
  if (static_cast<long long>(s.segments.size()) != count)
    throw std::invalid_argument("schedule record declares " + std::to_string(count) + " segments, found " +
                                std::to_string(s.segments.size()));
  s.validate();
  return s;
}

Schedule concatenate(const Schedule& a, const Schedule& b) {
  Schedule out = a;
  out.segments.insert(out.segments.end(), b.segments.begin(), b.segments.end());
  out.validate();
  return out;
}

Schedule random_schedule(Family family, const std::vector<std::size_t>& dims, std::size_t layers, Activation act,
                         Rng& rng, double lo, double hi, Integrator integrator, std::size_t steps_per_unit_time) {
  Schedule s{{}, steps_per_unit_time, integrator};
  for (std::size_t l = 0; l < layers; ++l) s.segments.push_back({random_layer(family, dims, act, rng, lo, hi), 1.0});
  return s;
}

// --- Stepping ----------------------------------------------------------------------------

namespace {

using detail::StepBuffers;

/// out = one step of size h along sign*f from x. `out` must not alias `x`.
void step_into(const ControlLayer& layer, Integrator integrator, double sign, double h, std::span<const double> x,
               std::span<double> out, StepBuffers& b, std::span<double> euler_cache = {}) {
  const std::size_t n = x.size();
  if (integrator == Integrator::euler) {
    layer.eval_into(x, b.k1, euler_cache);
    for (std::size_t i = 0; i < n; ++i) out[i] = x[i] + sign * h * b.k1[i];
    return;
  }
  const double sh = sign * h;
  layer.eval_into(x, b.k1);
  for (std::size_t i = 0; i < n; ++i) b.u[i] = x[i] + 0.5 * sh * b.k1[i];
  layer.eval_into(b.u, b.k2);
  for (std::size_t i = 0; i < n; ++i) b.u[i] = x[i] + 0.5 * sh * b.k2[i];
  layer.eval_into(b.u, b.k3);
  for (std::size_t i = 0; i < n; ++i) b.u[i] = x[i] + sh * b.k3[i];
  layer.eval_into(b.u, b.k4);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = x[i] + sh / 6.0 * (b.k1[i] + 2.0 * b.k2[i] + 2.0 * b.k3[i] + b.k4[i]);
}

void guard(std::span<const double> state, std::size_t step) {
  for (double v : state) {
    if (!std::isfinite(v) || std::abs(v) > blow_up_threshold) {
      char buf[96];
      std::snprintf(buf, sizeof buf, "flow blow-up at step %zu (|state| = %g)", step, std::abs(v));
      throw FlowBlowUp(step, buf);
    }
  }
}

void require_degree(const Schedule& schedule, std::size_t n) {
  if (!schedule.segments.empty() && schedule.degree() != n)
    throw std::invalid_argument("flow: state length " + std::to_string(n) + " != schedule degree " +
                                std::to_string(schedule.degree()));
}

/// Runs the schedule forward (sign +1) or backward in time (sign -1).
Vector run(const Schedule& schedule, std::span<const double> x, double sign, std::vector<Vector>* trajectory,
           std::size_t* steps_out) {
  require_degree(schedule, x.size());
  const std::size_t n = x.size();
  Vector cur(x.begin(), x.end()), next(n);
  StepBuffers b;
  b.resize(n);
  if (trajectory) trajectory->push_back(cur);
  std::size_t step = 0;
  const std::size_t count = schedule.segments.size();
  for (std::size_t s = 0; s < count; ++s) {
    const auto& seg = schedule.segments[sign > 0 ? s : count - 1 - s];
    const std::size_t m = schedule.steps_for(seg.duration);
    if (m == 0) continue;
    const double h = seg.duration / static_cast<double>(m);
    for (std::size_t k = 0; k < m; ++k) {
      step_into(seg.layer, schedule.integrator, sign, h, cur, next, b);
      std::swap(cur, next);
      guard(cur, ++step);
      if (trajectory) trajectory->push_back(cur);
    }
  }
  if (steps_out) *steps_out = step;
  return cur;
}

}  // namespace

Vector euler_step(const ControlLayer& layer, std::span<const double> x, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("euler_step: negative step");
  const Vector f = layer.eval(x);
  Vector out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += t * f[i];
  return out;
}

Vector rk4_step(const ControlLayer& layer, std::span<const double> x, double t) {
  if (!(t >= 0.0)) throw std::invalid_argument("rk4_step: negative step");
  if (x.size() != layer.degree()) throw std::invalid_argument("rk4_step: dimension mismatch");
  StepBuffers b;
  b.resize(x.size());
  Vector out(x.size());
  step_into(layer, Integrator::rk4, 1.0, t, x, out, b);
  return out;
}

FlowResult integrate(const Schedule& schedule, std::span<const double> x, bool record_trajectory) {
  FlowResult r;
  r.y = run(schedule, x, 1.0, record_trajectory ? &r.trajectory : nullptr, &r.steps);
  return r;
}

Vector inverse_integrate(const Schedule& schedule, std::span<const double> y) {
  return run(schedule, y, -1.0, nullptr, nullptr);
}

// --- Refinement -----------------------------------------------------------------------------

std::vector<double> RefinementStudy::orders() const {
  std::vector<double> out;
  for (const auto& r : rows)
    if (std::isfinite(r.order)) out.push_back(r.order);
  return out;
}

namespace {
double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}
}  // namespace

RefinementStudy refinement_study(const Schedule& schedule, std::span<const double> x, std::size_t levels,
                                 std::optional<Vector> reference) {
  if (levels < (reference ? 2u : 3u)) throw std::invalid_argument("refinement_study: too few levels");
  if (reference && reference->size() != x.size()) throw std::invalid_argument("refinement_study: reference length");
  std::vector<Vector> ys;
  std::vector<std::size_t> spus, totals;
  Schedule s = schedule;
  for (std::size_t l = 0; l < levels; ++l) {
    ys.push_back(integrate(s, x).y);
    spus.push_back(s.steps_per_unit_time);
    totals.push_back(s.total_steps());
    s.steps_per_unit_time *= 2;
  }
  RefinementStudy study;
  study.has_reference = reference.has_value();
  const std::size_t rows = reference ? levels : levels - 1;
  for (std::size_t l = 0; l < rows; ++l) {
    const double err = reference ? max_abs_diff(ys[l], *reference) : max_abs_diff(ys[l], ys[l + 1]);
    study.rows.push_back({spus[l], totals[l], err, std::numeric_limits<double>::quiet_NaN()});
  }
  study.exact = std::all_of(study.rows.begin(), study.rows.end(), [](const auto& r) { return r.error == 0.0; });
  if (!study.exact) {
    for (std::size_t l = 0; l + 1 < study.rows.size(); ++l) {
      const double e0 = study.rows[l].error, e1 = study.rows[l + 1].error;
      if (e0 > 0.0 && e1 > 0.0) study.rows[l].order = std::log2(e0 / e1);
    }
  }
  return study;
}

// --- Reverse mode --------------------------------------------------------------------------

void FlowWorkspace::forward(const Schedule& schedule, std::span<const double> x) {
  require_degree(schedule, x.size());
  n_ = x.size();
  plan_.resize(schedule.segments.size());
  steps_ = 0;
  std::size_t offset = 0;
  for (std::size_t s = 0; s < schedule.segments.size(); ++s) {
    const auto& seg = schedule.segments[s];
    const std::size_t m = schedule.steps_for(seg.duration);
    plan_[s] = {m, m ? seg.duration / static_cast<double>(m) : 0.0, offset};
    steps_ += m;
    offset += seg.layer.params().size();
  }
  states_.resize((steps_ + 1) * n_);
  cache_stride_ = 0;
  if (schedule.integrator == Integrator::euler)
    for (const auto& seg : schedule.segments)
      cache_stride_ = std::max(cache_stride_, 2 * seg.layer.activation_points());
  cache_.resize(steps_ * cache_stride_);
  for (auto* v : {&k1_, &k2_, &k3_, &k4_, &u_, &adj_, &gx_, &kbar1_, &kbar2_, &kbar3_, &kbar4_}) v->resize(n_);
  std::copy(x.begin(), x.end(), states_.begin());
  StepBuffers& b = buffers_;
  if (b.k1.size() != n_) b.resize(n_);
  std::size_t step = 0;
  for (std::size_t s = 0; s < schedule.segments.size(); ++s) {
    const auto& layer = schedule.segments[s].layer;
    for (std::size_t k = 0; k < plan_[s].steps; ++k, ++step) {
      std::span<const double> cur(&states_[step * n_], n_);
      std::span<double> next(&states_[(step + 1) * n_], n_);
      step_into(layer, schedule.integrator, 1.0, plan_[s].h, cur, next, b, step_cache(step, layer));
      guard(next, step + 1);
    }
  }
}

std::span<double> FlowWorkspace::step_cache(std::size_t step, const ControlLayer& layer) {
  if (cache_stride_ == 0) return {};
  return {cache_.data() + step * cache_stride_, 2 * layer.activation_points()};
}

std::span<const double> FlowWorkspace::terminal() const { return {&states_[steps_ * n_], n_}; }

void FlowWorkspace::backward(const Schedule& schedule, std::span<const double> cotangent,
                             std::span<double> grad_params, std::span<double> grad_x) {
  const std::size_t n = n_;
  if (cotangent.size() != n || grad_x.size() != n) throw std::invalid_argument("flow backward: length mismatch");
  if (grad_params.size() != schedule.param_count()) throw std::invalid_argument("flow backward: parameter length");
  std::copy(cotangent.begin(), cotangent.end(), adj_.begin());

  if (plan_.size() != schedule.segments.size()) throw std::logic_error("flow backward: forward pass missing");
  std::size_t step = steps_;
  for (std::size_t s = schedule.segments.size(); s-- > 0;) {
    const auto& layer = schedule.segments[s].layer;
    const std::size_t m = plan_[s].steps;
    if (m == 0) continue;
    const double h = plan_[s].h;
    std::span<double> gp = grad_params.subspan(plan_[s].offset, layer.params().size());
    for (std::size_t k = 0; k < m; ++k) {
      --step;
      std::span<const double> x(&states_[step * n], n);
      if (schedule.integrator == Integrator::euler) {
        for (std::size_t i = 0; i < n; ++i) kbar1_[i] = h * adj_[i];
        layer.vjp_into(x, kbar1_, gp, gx_, step_cache(step, layer));
        for (std::size_t i = 0; i < n; ++i) adj_[i] += gx_[i];
        continue;
      }
      // Recompute the stage inputs from the stored state.
      layer.eval_into(x, k1_);
      for (std::size_t i = 0; i < n; ++i) u_[i] = x[i] + 0.5 * h * k1_[i];
      layer.eval_into(u_, k2_);
      for (std::size_t i = 0; i < n; ++i) u_[i] = x[i] + 0.5 * h * k2_[i];
      layer.eval_into(u_, k3_);

      for (std::size_t i = 0; i < n; ++i) {
        kbar1_[i] = h / 6.0 * adj_[i];
        kbar2_[i] = h / 3.0 * adj_[i];
        kbar3_[i] = h / 3.0 * adj_[i];
        kbar4_[i] = h / 6.0 * adj_[i];
      }
      // Stage 4 at x + h k3.
      for (std::size_t i = 0; i < n; ++i) u_[i] = x[i] + h * k3_[i];
      layer.vjp_into(u_, kbar4_, gp, gx_);
      for (std::size_t i = 0; i < n; ++i) {
        adj_[i] += gx_[i];
        kbar3_[i] += h * gx_[i];
      }
      // Stage 3 at x + h/2 k2.
      for (std::size_t i = 0; i < n; ++i) u_[i] = x[i] + 0.5 * h * k2_[i];
      layer.vjp_into(u_, kbar3_, gp, gx_);
      for (std::size_t i = 0; i < n; ++i) {
        adj_[i] += gx_[i];
        kbar2_[i] += 0.5 * h * gx_[i];
      }
      // Stage 2 at x + h/2 k1.
      for (std::size_t i = 0; i < n; ++i) u_[i] = x[i] + 0.5 * h * k1_[i];
      layer.vjp_into(u_, kbar2_, gp, gx_);
      for (std::size_t i = 0; i < n; ++i) {
        adj_[i] += gx_[i];
        kbar1_[i] += 0.5 * h * gx_[i];
      }
      // Stage 1 at x.
      layer.vjp_into(x, kbar1_, gp, gx_);
      for (std::size_t i = 0; i < n; ++i) adj_[i] += gx_[i];
    }
  }
  std::copy(adj_.begin(), adj_.end(), grad_x.begin());
}

FlowGradient flow_vjp(const Schedule& schedule, std::span<const double> x, std::span<const double> cotangent) {
  FlowWorkspace ws;
  ws.forward(schedule, x);
  Vector flat(schedule.param_count(), 0.0);
  FlowGradient g;
  g.x.assign(x.size(), 0.0);
  ws.backward(schedule, cotangent, flat, g.x);
  std::size_t offset = 0;
  for (const auto& seg : schedule.segments) {
    const std::size_t k = seg.layer.params().size();
    g.params.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(offset),
                          flat.begin() + static_cast<std::ptrdiff_t>(offset + k));
    offset += k;
  }
  for (const auto& v : g.params)
    for (double d : v)
      if (!std::isfinite(d)) throw std::domain_error("flow_vjp: non-finite parameter gradient");
  for (double d : g.x)
    if (!std::isfinite(d)) throw std::domain_error("flow_vjp: non-finite input gradient");
  return g;
}

}  // namespace eqflow
