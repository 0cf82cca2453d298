#include "eqflow/control_families.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "eqflow/well_functions.hpp"

namespace eqflow {

// --- Activations ---------------------------------------------------------------

namespace {

/// tanh through a single expm1; |z| > 20 saturates to +-1 in double precision.
double tanh_expm1(double z) {
  if (z > 20.0) return 1.0;
  if (z < -20.0) return -1.0;
  const double e = std::expm1(2.0 * z);
  return e / (e + 2.0);
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double sigmoid_derivative(double z) {
  const double s = sigmoid(z);
  return s * (1.0 - s);
}

/// act(z) and act'(z) from a single transcendental evaluation.
struct ActPair {
  double value;
  double slope;
};

inline ActPair activate_pair(Activation a, double z) {
  switch (a) {
    case Activation::relu: return z > 0 ? ActPair{z, 1.0} : ActPair{0.0, 0.0};
    case Activation::tanh: {
      const double t = tanh_expm1(z);
      return {t, 1.0 - t * t};
    }
    case Activation::sigmoid: {
      const double s = sigmoid(z);
      return {s, s * (1.0 - s)};
    }
  }
  return {0.0, 0.0};
}

}  // namespace

double activate(Activation a, double z) { return activate_pair(a, z).value; }

double activate_derivative(Activation a, double z) { return activate_pair(a, z).slope; }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

// --- Family metadata ---------------------------------------------------------------

namespace {

struct FamilyName {
  Family family;
  const char* name;
};

constexpr FamilyName family_names[] = {
    {Family::conv1, "conv1"},       {Family::conv2, "conv2"},       {Family::fs1, "fs1"},
    {Family::fs2, "fs2"},           {Family::janossy1, "janossy1"}, {Family::janossy2, "janossy2"},
    {Family::fsmax, "fsmax"},       {Family::prod2d_1, "prod2d_1"}, {Family::prod2d_2, "prod2d_2"},
    {Family::prodkd_1, "prodkd_1"}, {Family::prodkd_2, "prodkd_2"}, {Family::gamma1, "gamma1"},
    {Family::linear, "linear"},
};

bool is_conv(Family f) { return f == Family::conv1 || f == Family::conv2; }
bool is_product(Family f) {
  return f == Family::prod2d_1 || f == Family::prod2d_2 || f == Family::prodkd_1 || f == Family::prodkd_2;
}
bool is_second_order(Family f) { return f == Family::prod2d_2 || f == Family::prodkd_2; }

void require_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw std::domain_error(std::string(what) + ": non-finite value");
}

}  // namespace

std::string to_string(Family f) {
  for (const auto& fn : family_names)
    if (fn.family == f) return fn.name;
  return "?";
}

Family family_from_string(const std::string& s) {
  for (const auto& fn : family_names)
    if (s == fn.name) return fn.family;
  throw std::invalid_argument("unknown control family '" + s + "'");
}

const std::vector<Family>& all_families() {
  static const std::vector<Family> families = [] {
    std::vector<Family> out;
    for (const auto& fn : family_names) out.push_back(fn.family);
    return out;
  }();
  return families;
}

std::size_t param_count(Family f, const std::vector<std::size_t>& dims) {
  const std::size_t n = product_of(dims);
  const std::size_t k = dims.size();
  switch (f) {
    case Family::conv1:
    case Family::conv2: return n + 2;
    case Family::fs1:
    case Family::janossy1:
    case Family::janossy2:
    case Family::fsmax: return 4;
    case Family::fs2: return 6;
    case Family::prod2d_1: return 5;
    case Family::prod2d_2: return 7;
    case Family::prodkd_1: return 3 + k;
    case Family::prodkd_2: return 3 + 2 * k;
    case Family::gamma1: return 0;
    case Family::linear: return 1;
  }
  return 0;
}

std::string format_dims(const std::vector<std::size_t>& dims) {
  std::string s;
  for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
  return s;
}

std::vector<std::size_t> parse_dims(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream in(text);
  std::string part;
  while (std::getline(in, part, 'x')) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || v == 0) throw std::invalid_argument("bad dims '" + text + "'");
    dims.push_back(v);
  }
  if (dims.empty()) throw std::invalid_argument("bad dims '" + text + "'");
  return dims;
}

// --- Pooling primitives ------------------------------------------------------------

namespace {

std::vector<std::size_t> make_shift_table(const std::vector<std::size_t>& dims) {
  const std::size_t n = product_of(dims);
  std::vector<std::size_t> table(n * n);
  for (std::size_t j = 0; j < n; ++j) {
    const auto mj = unflatten_index(dims, j);
    for (std::size_t k = 0; k < n; ++k) {
      const auto mk = unflatten_index(dims, k);
      std::vector<std::size_t> m(dims.size());
      for (std::size_t a = 0; a < dims.size(); ++a) m[a] = (mj[a] + mk[a]) % dims[a];
      table[j * n + k] = flatten_index(dims, m);
    }
  }
  return table;
}

std::vector<std::size_t> make_coord_table(const std::vector<std::size_t>& dims) {
  const std::size_t n = product_of(dims);
  std::vector<std::size_t> table(dims.size() * n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto m = unflatten_index(dims, i);
    for (std::size_t a = 0; a < dims.size(); ++a) table[a * n + i] = m[a];
  }
  return table;
}

}  // namespace

Vector circular_convolution(std::span<const double> w, std::span<const double> x, const std::vector<std::size_t>& dims) {
  const std::size_t n = product_of(dims);
  if (w.size() != n || x.size() != n) throw std::invalid_argument("circular_convolution: length mismatch");
  const auto table = make_shift_table(dims);
  Vector out(n, 0.0);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < n; ++k) out[j] += x[table[j * n + k]] * w[k];
  return out;
}

Vector circular_convolution(std::span<const double> w, std::span<const double> x) {
  return circular_convolution(w, x, {x.size()});
}

Vector axis_sums(std::span<const double> x, const std::vector<std::size_t>& dims, std::size_t axis) {
  if (x.size() != product_of(dims) || axis >= dims.size()) throw std::invalid_argument("axis_sums: bad shape");
  Vector slice(dims[axis], 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) slice[unflatten_index(dims, i)[axis]] += x[i];
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = slice[unflatten_index(dims, i)[axis]];
  return out;
}

Vector axis_sums_squared(std::span<const double> x, const std::vector<std::size_t>& dims, std::size_t axis) {
  auto out = axis_sums(x, dims, axis);
  for (auto& v : out) v *= v;
  return out;
}

// --- ControlLayer ---------------------------------------------------------------------

ControlLayer::ControlLayer(Family family, std::vector<std::size_t> dims, Vector params, Activation activation)
    : family_(family), dims_(std::move(dims)), params_(std::move(params)), activation_(activation) {
  if (dims_.empty()) throw std::invalid_argument("ControlLayer: no dimensions");
  for (auto d : dims_)
    if (d == 0) throw std::invalid_argument("ControlLayer: zero-length axis");
  n_ = product_of(dims_);
  if ((family_ == Family::prod2d_1 || family_ == Family::prod2d_2) && dims_.size() != 2)
    throw std::invalid_argument(to_string(family_) + " needs a 2D grid");
  if (!is_conv(family_) && !is_product(family_) && dims_.size() != 1)
    throw std::invalid_argument(to_string(family_) + " acts on a flat vector; give a single dimension");
  if (params_.size() != param_count(family_, dims_))
    throw std::invalid_argument(to_string(family_) + " expects " + std::to_string(param_count(family_, dims_)) +
                                " parameters, got " + std::to_string(params_.size()));
  require_finite(params_, "ControlLayer parameters");
  if (is_conv(family_)) shift_ = make_shift_table(dims_);
  if (is_product(family_)) coord_ = make_coord_table(dims_);
}

void ControlLayer::require_input(std::span<const double> x) const {
  if (x.size() != n_)
    throw std::invalid_argument(to_string(family_) + ": input length " + std::to_string(x.size()) + " != " +
                                std::to_string(n_));
}

Vector ControlLayer::eval(std::span<const double> x) const {
  require_input(x);
  Vector out(n_);
  eval_into(x, out);
  return out;
}

namespace {
thread_local Vector scratch_a, scratch_b, scratch_c;

Vector& scratch(Vector& buf, std::size_t n) {
  if (buf.size() < n) buf.resize(n);
  return buf;
}
}  // namespace

std::size_t ControlLayer::activation_points() const noexcept {
  switch (family_) {
    case Family::fs2: return 2 * n_;
    case Family::gamma1:
    case Family::linear: return 0;
    default: return n_;
  }
}

void ControlLayer::eval_into(std::span<const double> x, std::span<double> out, std::span<double> cache) const {
  const std::size_t n = n_;
  const auto& p = params_;
  const Activation act = activation_;
  // Point idx stores (act(z), act'(z)) at cache[2 idx], cache[2 idx + 1].
  auto act_at = [&](std::size_t idx, double z) {
    if (cache.empty()) return activate(act, z);
    const ActPair s = activate_pair(act, z);
    cache[2 * idx] = s.value;
    cache[2 * idx + 1] = s.slope;
    return s.value;
  };
  switch (family_) {
    case Family::conv1: {
      const double v = p[n], b = p[n + 1];
      for (std::size_t j = 0; j < n; ++j) {
        double z = b;
        const std::size_t* row = &shift_[j * n];
        for (std::size_t k = 0; k < n; ++k) z += x[row[k]] * p[k];
        out[j] = v * act_at(j, z);
      }
      break;
    }
    case Family::conv2: {
      const double v = p[n], b = p[n + 1];
      auto& s = scratch(scratch_a, n);
      for (std::size_t i = 0; i < n; ++i) s[i] = act_at(i, v * x[i] + b);
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        const std::size_t* row = &shift_[j * n];
        for (std::size_t k = 0; k < n; ++k) acc += s[row[k]] * p[k];
        out[j] = acc;
      }
      break;
    }
    case Family::fs1: {
      const double a = p[0], w = p[1], v = p[2], b = p[3];
      const double sum = std::accumulate(x.begin(), x.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i) out[i] = a * act_at(i, w * x[i] + v * sum + b);
      break;
    }
    case Family::fs2: {
      const double a = p[0], bb = p[1], w = p[2], v = p[3], c = p[4], d = p[5];
      double pooled = 0.0;
      for (std::size_t j = 0; j < n; ++j) pooled += act_at(j, v * x[j] + d);
      for (std::size_t i = 0; i < n; ++i) out[i] = a * act_at(n + i, w * x[i] + c) + bb * pooled;
      break;
    }
    case Family::janossy1:
    case Family::janossy2:
    case Family::fsmax: {
      const double v = p[0], a = p[1], b = p[2], c = p[3];
      double pooled = 0.0;
      if (family_ == Family::janossy1) {
        for (double xi : x) pooled += sigmoid(xi);
      } else if (family_ == Family::janossy2) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) pooled += sigmoid(x[i] * x[j]);
      } else {
        pooled = *std::max_element(x.begin(), x.end());
      }
      for (std::size_t i = 0; i < n; ++i) out[i] = v * act_at(i, a * x[i] + b * pooled + c);
      break;
    }
    case Family::prod2d_1:
    case Family::prod2d_2:
    case Family::prodkd_1:
    case Family::prodkd_2: {
      const std::size_t k = dims_.size();
      const bool second = is_second_order(family_);
      const double v = p[0], w0 = p[1], c = p.back();
      auto& z = scratch(scratch_a, n);
      for (std::size_t i = 0; i < n; ++i) z[i] = w0 * x[i] + c;
      auto& slice = scratch(scratch_b, *std::max_element(dims_.begin(), dims_.end()));
      for (std::size_t axis = 0; axis < k; ++axis) {
        const std::size_t* coord = &coord_[axis * n];
        std::fill(slice.begin(), slice.begin() + static_cast<std::ptrdiff_t>(dims_[axis]), 0.0);
        for (std::size_t i = 0; i < n; ++i) slice[coord[i]] += x[i];
        const double w1 = p[2 + axis];
        const double w2 = second ? p[2 + k + axis] : 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double s = slice[coord[i]];
          z[i] += w1 * s + w2 * s * s;
        }
      }
      for (std::size_t i = 0; i < n; ++i) out[i] = v * act_at(i, z[i]);
      break;
    }
    case Family::gamma1: {
      const double g = well_bump(std::accumulate(x.begin(), x.end(), 0.0));
      std::fill(out.begin(), out.end(), g);
      break;
    }
    case Family::linear: {
      for (std::size_t i = 0; i < n; ++i) out[i] = p[0] * x[i];
      break;
    }
  }
}

LayerGradient ControlLayer::vjp(std::span<const double> x, std::span<const double> cotangent) const {
  require_input(x);
  if (cotangent.size() != n_) throw std::invalid_argument("vjp: cotangent length mismatch");
  LayerGradient g{Vector(params_.size(), 0.0), Vector(n_, 0.0)};
  vjp_into(x, cotangent, g.params, g.x);
  require_finite(g.params, "vjp parameter gradient");
  require_finite(g.x, "vjp input gradient");
  return g;
}

void ControlLayer::vjp_into(std::span<const double> x, std::span<const double> cot, std::span<double> gp,
                            std::span<double> gx, std::span<const double> cache) const {
  const std::size_t n = n_;
  const auto& p = params_;
  const Activation act = activation_;
  // Reads point idx from the forward cache, or evaluates z() when there is none.
  auto pair_at = [&](std::size_t idx, auto&& z) {
    if (!cache.empty()) return ActPair{cache[2 * idx], cache[2 * idx + 1]};
    return activate_pair(act, z());
  };
  switch (family_) {
    case Family::conv1: {
      const double v = p[n], b = p[n + 1];
      auto& dz = scratch(scratch_a, n);
      for (std::size_t j = 0; j < n; ++j) {
        const ActPair s = pair_at(j, [&] {
          double z = b;
          const std::size_t* row = &shift_[j * n];
          for (std::size_t k = 0; k < n; ++k) z += x[row[k]] * p[k];
          return z;
        });
        gp[n] += cot[j] * s.value;
        dz[j] = cot[j] * v * s.slope;
      }
      std::fill(gx.begin(), gx.end(), 0.0);
      double sum_dz = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        sum_dz += dz[j];
        const std::size_t* row = &shift_[j * n];
        for (std::size_t k = 0; k < n; ++k) {
          gp[k] += dz[j] * x[row[k]];
          gx[row[k]] += dz[j] * p[k];
        }
      }
      gp[n + 1] += sum_dz;
      break;
    }
    case Family::conv2: {
      const double v = p[n], b = p[n + 1];
      auto& s = scratch(scratch_a, n);
      auto& slope = scratch(scratch_c, n);
      auto& ds = scratch(scratch_b, n);
      for (std::size_t i = 0; i < n; ++i) {
        const ActPair a = pair_at(i, [&] { return v * x[i] + b; });
        s[i] = a.value;
        slope[i] = a.slope;
        ds[i] = 0.0;
      }
      for (std::size_t j = 0; j < n; ++j) {
        const std::size_t* row = &shift_[j * n];
        for (std::size_t k = 0; k < n; ++k) {
          gp[k] += cot[j] * s[row[k]];
          ds[row[k]] += cot[j] * p[k];
        }
      }
      for (std::size_t i = 0; i < n; ++i) {
        const double dz = ds[i] * slope[i];
        gp[n] += dz * x[i];
        gp[n + 1] += dz;
        gx[i] = dz * v;
      }
      break;
    }
    case Family::fs1: {
      const double a = p[0], w = p[1], v = p[2], b = p[3];
      const double sum = std::accumulate(x.begin(), x.end(), 0.0);
      double sum_dz = 0.0;
      auto& dz = scratch(scratch_a, n);
      for (std::size_t i = 0; i < n; ++i) {
        const ActPair s = pair_at(i, [&] { return w * x[i] + v * sum + b; });
        gp[0] += cot[i] * s.value;
        dz[i] = cot[i] * a * s.slope;
        gp[1] += dz[i] * x[i];
        sum_dz += dz[i];
      }
      gp[2] += sum * sum_dz;
      gp[3] += sum_dz;
      for (std::size_t i = 0; i < n; ++i) gx[i] = w * dz[i] + v * sum_dz;
      break;
    }
    case Family::fs2: {
      const double a = p[0], bb = p[1], w = p[2], v = p[3], c = p[4], d = p[5];
      double pooled = 0.0, total_cot = 0.0;
      auto& q_slope = scratch(scratch_a, n);
      for (std::size_t j = 0; j < n; ++j) {
        const ActPair q = pair_at(j, [&] { return v * x[j] + d; });
        pooled += q.value;
        q_slope[j] = q.slope;
        total_cot += cot[j];
      }
      gp[1] += total_cot * pooled;
      for (std::size_t i = 0; i < n; ++i) {
        const ActPair sp = pair_at(n + i, [&] { return w * x[i] + c; });
        gp[0] += cot[i] * sp.value;
        const double dp = cot[i] * a * sp.slope;
        gp[2] += dp * x[i];
        gp[4] += dp;
        const double dq = bb * total_cot * q_slope[i];
        gp[3] += dq * x[i];
        gp[5] += dq;
        gx[i] = w * dp + v * dq;
      }
      break;
    }
    case Family::janossy1:
    case Family::janossy2:
    case Family::fsmax: {
      const double v = p[0], a = p[1], b = p[2], c = p[3];
      double pooled = 0.0;
      std::size_t argmax = 0;
      if (family_ == Family::janossy1) {
        for (double xi : x) pooled += sigmoid(xi);
      } else if (family_ == Family::janossy2) {
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < n; ++j) pooled += sigmoid(x[i] * x[j]);
      } else {
        argmax = static_cast<std::size_t>(std::max_element(x.begin(), x.end()) - x.begin());
        pooled = x[argmax];
      }
      double sum_dz = 0.0;
      auto& dz = scratch(scratch_a, n);
      for (std::size_t i = 0; i < n; ++i) {
        const ActPair s = pair_at(i, [&] { return a * x[i] + b * pooled + c; });
        gp[0] += cot[i] * s.value;
        dz[i] = cot[i] * v * s.slope;
        gp[1] += dz[i] * x[i];
        sum_dz += dz[i];
      }
      gp[2] += pooled * sum_dz;
      gp[3] += sum_dz;
      const double d_pooled = b * sum_dz;
      for (std::size_t i = 0; i < n; ++i) gx[i] = a * dz[i];
      if (family_ == Family::janossy1) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += d_pooled * sigmoid_derivative(x[i]);
      } else if (family_ == Family::janossy2) {
        for (std::size_t m = 0; m < n; ++m) {
          double dP = 0.0;
          for (std::size_t j = 0; j < n; ++j) dP += sigmoid_derivative(x[m] * x[j]) * x[j];
          gx[m] += d_pooled * 2.0 * dP;
        }
      } else {
        gx[argmax] += d_pooled;
      }
      break;
    }
    case Family::prod2d_1:
    case Family::prod2d_2:
    case Family::prodkd_1:
    case Family::prodkd_2: {
      const std::size_t k = dims_.size();
      const bool second = is_second_order(family_);
      const double v = p[0], w0 = p[1], c = p.back();
      const std::size_t max_dim = *std::max_element(dims_.begin(), dims_.end());
      // Slice sums for every axis, stored axis-major with stride max_dim.
      auto& slices = scratch(scratch_b, k * max_dim);
      std::fill(slices.begin(), slices.begin() + static_cast<std::ptrdiff_t>(k * max_dim), 0.0);
      for (std::size_t axis = 0; axis < k; ++axis)
        for (std::size_t i = 0; i < n; ++i) slices[axis * max_dim + coord_[axis * n + i]] += x[i];
      auto& dz = scratch(scratch_a, n);
      double sum_dz = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const ActPair s = pair_at(i, [&] {
          double z = w0 * x[i] + c;
          for (std::size_t axis = 0; axis < k; ++axis) {
            const double si = slices[axis * max_dim + coord_[axis * n + i]];
            z += p[2 + axis] * si + (second ? p[2 + k + axis] * si * si : 0.0);
          }
          return z;
        });
        gp[0] += cot[i] * s.value;
        dz[i] = cot[i] * v * s.slope;
        gp[1] += dz[i] * x[i];
        sum_dz += dz[i];
      }
      gp.back() += sum_dz;
      for (std::size_t i = 0; i < n; ++i) gx[i] = w0 * dz[i];
      auto& dslice = scratch(scratch_c, max_dim);
      for (std::size_t axis = 0; axis < k; ++axis) {
        const std::size_t* coord = &coord_[axis * n];
        const double* s = &slices[axis * max_dim];
        std::fill(dslice.begin(), dslice.begin() + static_cast<std::ptrdiff_t>(dims_[axis]), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double si = s[coord[i]];
          gp[2 + axis] += dz[i] * si;
          if (second) gp[2 + k + axis] += dz[i] * si * si;
          dslice[coord[i]] += dz[i];
        }
        const double w1 = p[2 + axis];
        const double w2 = second ? p[2 + k + axis] : 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double sj = s[coord[j]];
          gx[j] += (w1 + 2.0 * w2 * sj) * dslice[coord[j]];
        }
      }
      break;
    }
    case Family::gamma1: {
      const double sum = std::accumulate(x.begin(), x.end(), 0.0);
      const double total_cot = std::accumulate(cot.begin(), cot.end(), 0.0);
      std::fill(gx.begin(), gx.end(), well_bump_derivative(sum) * total_cot);
      break;
    }
    case Family::linear: {
      for (std::size_t i = 0; i < n; ++i) {
        gp[0] += cot[i] * x[i];
        gx[i] = p[0] * cot[i];
      }
      break;
    }
  }
}

ControlLayer ControlLayer::with_params(Vector params) const {
  return ControlLayer(family_, dims_, std::move(params), activation_);
}

std::string ControlLayer::declared_group() const {
  if (is_conv(family_)) {
    if (dims_.size() == 1) return "translation_1d " + std::to_string(n_);
    std::string s = "translation_nd";
    for (auto d : dims_) s += " " + std::to_string(d);
    return s;
  }
  if (is_product(family_)) {
    std::string s = "product";
    for (auto d : dims_) s += " " + std::to_string(d);
    return s;
  }
  return "symmetric " + std::to_string(n_);
}

std::string ControlLayer::serialize() const {
  std::string out = to_string(family_) + " " + format_dims(dims_) + " " + to_string(activation_);
  char buf[40];
  for (double v : params_) {
    std::snprintf(buf, sizeof buf, " %.17g", v);
    out += buf;
  }
  return out;
}

ControlLayer ControlLayer::parse(const std::string& record) {
  std::istringstream in(record);
  std::string family, dims, activation;
  if (!(in >> family >> dims >> activation)) throw std::invalid_argument("layer record '" + record + "' is incomplete");
  Vector params;
  std::string tok;
  while (in >> tok) {
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') throw std::invalid_argument("layer record: bad number '" + tok + "'");
    params.push_back(v);
  }
  return ControlLayer(family_from_string(family), parse_dims(dims), std::move(params),
                      activation_from_string(activation));
}

ScalarField coor_representative(const ControlLayer& layer) {
  return [layer](std::span<const double> x) { return layer.eval(x)[0]; };
}

PermGroup declared_group(const ControlLayer& layer) { return parse_group(layer.declared_group()); }

ControlLayer random_layer(Family family, const std::vector<std::size_t>& dims, Activation activation, Rng& rng,
                          double lo, double hi) {
  return ControlLayer(family, dims, rng.uniform_vector(param_count(family, dims), lo, hi), activation);
}

}  // namespace eqflow
