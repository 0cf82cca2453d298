#include "eqflow/hypothesis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numeric>
#include <thread>

namespace eqflow {

std::string to_string(Terminal t) {
  switch (t) {
    case Terminal::sum: return "sum";
    case Terminal::mean: return "mean";
    case Terminal::max: return "max";
  }
  return "?";
}

Terminal terminal_from_string(const std::string& s) {
  if (s == "sum") return Terminal::sum;
  if (s == "mean") return Terminal::mean;
  if (s == "max") return Terminal::max;
  throw std::invalid_argument("unknown terminal '" + s + "'");
}

double terminal_value(Terminal t, std::span<const double> y) {
  if (y.empty()) throw std::invalid_argument("terminal_value: empty state");
  switch (t) {
    case Terminal::sum: return std::accumulate(y.begin(), y.end(), 0.0);
    case Terminal::mean: return std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
    case Terminal::max: return *std::max_element(y.begin(), y.end());
  }
  return 0.0;
}

void terminal_gradient(Terminal t, std::span<const double> y, std::span<double> out) {
  switch (t) {
    case Terminal::sum: std::fill(out.begin(), out.end(), 1.0); break;
    case Terminal::mean: std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(y.size())); break;
    case Terminal::max:
      std::fill(out.begin(), out.end(), 0.0);
      out[static_cast<std::size_t>(std::max_element(y.begin(), y.end()) - y.begin())] = 1.0;
      break;
  }
}

double forward(const Model& model, std::span<const double> x) {
  return terminal_value(model.terminal, integrate(model.schedule, x).y);
}

Model make_model(const ModelSpec& spec, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 3));
  Model m;
  m.schedule = random_schedule(spec.family, spec.dims, spec.layers, spec.activation, rng, spec.init_lo, spec.init_hi,
                               spec.integrator, spec.steps_per_unit_time);
  m.schedule.validate();
  m.terminal = spec.terminal;
  m.dims = spec.dims;
  m.group = spec.layers > 0 ? m.schedule.segments.front().layer.declared_group()
                            : "symmetric " + std::to_string(product_of(spec.dims));
  return m;
}

// --- Targets ------------------------------------------------------------------------------

std::vector<std::string> TargetRegistry::tags() const {
  std::vector<std::string> out;
  for (const auto& [tag, _] : factories_) out.push_back(tag);
  return out;
}

void TargetRegistry::add(const std::string& tag, Factory factory) { factories_[tag] = std::move(factory); }

TargetFunction TargetRegistry::make(const std::string& tag, const std::vector<std::size_t>& dims) const {
  auto it = factories_.find(tag);
  if (it == factories_.end()) throw std::invalid_argument("unknown target '" + tag + "'");
  TargetFunction t = it->second(dims);
  const PermGroup g = parse_group(t.group);
  const std::size_t n = product_of(dims);
  if (g.degree() != n) throw std::logic_error("target '" + tag + "': group degree mismatch");
  Rng rng(derive_seed(0x7a5e7, n));
  for (int s = 0; s < 200; ++s) {
    const Vector x = rng.uniform_vector(n, -2.0, 2.0);
    const auto& h = g.elements()[rng.index(g.size())];
    const double a = t(x), b = t(act_vector(h, x));
    if (std::abs(a - b) > 1e-10 * (1.0 + std::abs(a)))
      throw std::logic_error("target '" + tag + "' is not invariant under " + t.group);
  }
  return t;
}

namespace {

std::size_t flat_degree(const std::vector<std::size_t>& dims) {
  if (dims.empty()) throw std::invalid_argument("target: empty dims");
  return product_of(dims);
}

TargetRegistry build_registry() {
  TargetRegistry r;
  r.add("t3_antisym", [](const std::vector<std::size_t>& dims) {
    if (dims != std::vector<std::size_t>{3}) throw std::invalid_argument("t3_antisym needs dims [3]");
    return TargetFunction{"t3_antisym",
                          [](std::span<const double> x) { return (x[0] - x[1]) * (x[1] - x[2]) * (x[2] - x[0]); },
                          "translation_1d 3", dims};
  });
  auto symmetric = [](const std::string& tag, auto fn) {
    return [tag, fn](const std::vector<std::size_t>& dims) {
      const std::size_t n = flat_degree(dims);
      return TargetFunction{tag, fn, "symmetric " + std::to_string(n), dims};
    };
  };
  r.add("range", symmetric("range", [](std::span<const double> x) {
          const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
          return *hi - *lo;
        }));
  r.add("prod", symmetric("prod", [](std::span<const double> x) {
          return std::accumulate(x.begin(), x.end(), 1.0, std::multiplies<>());
        }));
  r.add("sum_sq", symmetric("sum_sq", [](std::span<const double> x) {
          return std::inner_product(x.begin(), x.end(), x.begin(), 0.0);
        }));
  r.add("min", symmetric("min", [](std::span<const double> x) { return *std::min_element(x.begin(), x.end()); }));
  r.add("row_sq_sum", [](const std::vector<std::size_t>& dims) {
    if (dims.size() != 2) throw std::invalid_argument("row_sq_sum needs a 2D grid");
    const std::size_t rows = dims[0], cols = dims[1];
    return TargetFunction{"row_sq_sum",
                          [rows, cols](std::span<const double> x) {
                            double total = 0.0;
                            for (std::size_t i = 0; i < rows; ++i) {
                              double s = 0.0;
                              for (std::size_t j = 0; j < cols; ++j) s += x[i * cols + j];
                              total += s * s;
                            }
                            return total;
                          },
                          "product " + std::to_string(rows) + " " + std::to_string(cols), dims};
  });
  return r;
}

}  // namespace

const TargetRegistry& register_targets() {
  static const TargetRegistry registry = build_registry();
  return registry;
}

TargetFunction group_average(const TargetFunction& target, const PermGroup& g) {
  auto elements = std::make_shared<std::vector<Permutation>>(g.elements());
  auto fn = target.fn;
  const std::size_t n = g.degree();
  TargetFunction out;
  out.tag = "avg(" + target.tag + ")";
  out.dims = target.dims;
  out.group = g.descriptor().empty() ? target.group : g.descriptor();
  out.fn = [elements, fn, n](std::span<const double> x) {
    if (x.size() != n) throw std::invalid_argument("group_average: dimension mismatch");
    double total = 0.0;
    for (const auto& p : *elements) total += fn(act_vector(p, x));
    return total / static_cast<double>(elements->size());
  };
  return out;
}

// --- Data and loss --------------------------------------------------------------------------

Dataset sample_dataset(const TargetFunction& target, std::size_t n, std::size_t count, double kappa,
                       std::uint64_t seed) {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw std::invalid_argument("sample_dataset: kappa must be positive");
  Rng rng(seed);
  Dataset d;
  d.n = n;
  d.xs = rng.uniform_vector(n * count, -kappa, kappa);
  d.ys.resize(count);
  for (std::size_t i = 0; i < count; ++i) d.ys[i] = target(d.x(i));
  return d;
}

namespace {

constexpr std::size_t chunk_size = 256;

double rms(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s / static_cast<double>(v.size()));
}

/// Runs `work(chunk)` for every chunk, spreading chunks across threads.
template <class Work>
void for_chunks(std::size_t chunks, std::size_t threads, Work&& work) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(chunks, 1));
  if (threads == 1) {
    for (std::size_t c = 0; c < chunks; ++c) work(c);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (std::size_t c = t; c < chunks; c += threads) work(c);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

LossValue loss(const Model& model, const Dataset& data, std::size_t threads) {
  if (data.size() == 0) throw std::invalid_argument("loss: empty dataset");
  const std::size_t chunks = (data.size() + chunk_size - 1) / chunk_size;
  std::vector<double> partial(chunks, 0.0);
  for_chunks(chunks, threads, [&](std::size_t c) {
    const std::size_t end = std::min(data.size(), (c + 1) * chunk_size);
    double s = 0.0;
    for (std::size_t i = c * chunk_size; i < end; ++i) {
      const double r = forward(model, data.x(i)) - data.ys[i];
      s += r * r;
    }
    partial[c] = s;
  });
  const double mse = std::accumulate(partial.begin(), partial.end(), 0.0) / static_cast<double>(data.size());
  const double scale = rms(data.ys);
  return {mse, scale > 0.0 ? std::sqrt(mse) / scale : std::numeric_limits<double>::infinity()};
}

LossValue loss(const Model& model, const TargetFunction& target, std::span<const Vector> samples) {
  if (samples.empty()) throw std::invalid_argument("loss: no samples");
  Dataset d;
  d.n = samples.front().size();
  for (const auto& x : samples) {
    if (x.size() != d.n) throw std::invalid_argument("loss: ragged samples");
    d.xs.insert(d.xs.end(), x.begin(), x.end());
    d.ys.push_back(target(x));
  }
  return loss(model, d);
}

double loss_and_gradient(const Model& model, const Dataset& data, std::span<double> grad, std::size_t threads) {
  const std::size_t p = model.schedule.param_count();
  if (grad.size() != p) throw std::invalid_argument("loss_and_gradient: gradient length");
  if (data.size() == 0) throw std::invalid_argument("loss_and_gradient: empty dataset");
  const std::size_t n = data.n;
  const std::size_t chunks = (data.size() + chunk_size - 1) / chunk_size;
  std::vector<double> partial_loss(chunks, 0.0);
  std::vector<Vector> partial_grad(chunks, Vector(p, 0.0));
  const double inv_count = 1.0 / static_cast<double>(data.size());
  for_chunks(chunks, threads, [&](std::size_t c) {
    FlowWorkspace ws;
    Vector cot(n), gx(n);
    const std::size_t end = std::min(data.size(), (c + 1) * chunk_size);
    double s = 0.0;
    for (std::size_t i = c * chunk_size; i < end; ++i) {
      ws.forward(model.schedule, data.x(i));
      const auto y = ws.terminal();
      const double r = terminal_value(model.terminal, y) - data.ys[i];
      s += r * r;
      terminal_gradient(model.terminal, y, cot);
      for (auto& v : cot) v *= 2.0 * r * inv_count;
      ws.backward(model.schedule, cot, partial_grad[c], gx);
    }
    partial_loss[c] = s;
  });
  std::fill(grad.begin(), grad.end(), 0.0);
  for (const auto& g : partial_grad)
    for (std::size_t k = 0; k < p; ++k) grad[k] += g[k];
  return std::accumulate(partial_loss.begin(), partial_loss.end(), 0.0) * inv_count;
}

// --- Training --------------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (train_samples == 0 || test_samples == 0) throw std::invalid_argument("train config: sample counts must be positive");
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw std::invalid_argument("train config: kappa must be positive");
  if (!std::isfinite(learning_rate) || learning_rate <= 0.0)
    throw std::invalid_argument("train config: learning_rate must be positive");
  if (!std::isfinite(momentum) || momentum < 0.0 || momentum >= 1.0)
    throw std::invalid_argument("train config: momentum must lie in [0, 1)");
  if (log_every == 0) throw std::invalid_argument("train config: log_every must be positive");
  if (!(divergence_threshold > 0.0)) throw std::invalid_argument("train config: divergence_threshold must be positive");
}

TrainResult train(const Model& model, const TargetFunction& target, const TrainConfig& config) {
  config.validate();
  const std::size_t n = product_of(model.dims.empty() ? std::vector<std::size_t>{model.schedule.degree()} : model.dims);
  if (n != model.schedule.degree() && !model.schedule.segments.empty())
    throw std::invalid_argument("train: model dims do not match the schedule");
  const Dataset train_set = sample_dataset(target, n, config.train_samples, config.kappa, derive_seed(config.seed, 1));
  const Dataset test_set = sample_dataset(target, n, config.test_samples, config.kappa, derive_seed(config.seed, 2));

  TrainResult result;
  result.model = model;
  Vector theta = model.schedule.flat_params();
  Vector velocity(theta.size(), 0.0), grad(theta.size(), 0.0);

  auto diverged = [&](std::size_t it, double value) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "training diverged at iteration %zu (loss %g)", it, value);
    throw TrainingDiverged(it, buf);
  };

  for (std::size_t it = 0;; ++it) {
    double train_loss = 0.0;
    try {
      train_loss = loss_and_gradient(result.model, train_set, grad, config.threads);
    } catch (const FlowBlowUp& e) {
      diverged(it, std::numeric_limits<double>::infinity());
    }
    if (!std::isfinite(train_loss) || train_loss > config.divergence_threshold) diverged(it, train_loss);

    const bool last = it == config.iterations;
    if (it % config.log_every == 0 || last) {
      const LossValue test = loss(result.model, test_set, config.threads);
      result.history.push_back({it, train_loss, test.mse, test.rel_err});
    }
    if (last) break;

    for (std::size_t k = 0; k < theta.size(); ++k) {
      velocity[k] = config.momentum * velocity[k] + grad[k];
      theta[k] -= config.learning_rate * velocity[k];
    }
    try {
      result.model.schedule = result.model.schedule.with_flat_params(theta);
    } catch (const std::domain_error&) {
      diverged(it, train_loss);
    }
  }
  result.final_train = loss(result.model, train_set, config.threads);
  result.final_test = loss(result.model, test_set, config.threads);
  return result;
}

std::string history_csv(const std::vector<HistoryRow>& history) {
  std::string out = "iteration,train_loss,test_loss,rel_err\n";
  char buf[128];
  for (const auto& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.10e,%.10e,%.10e\n", r.iteration, r.train_loss, r.test_loss, r.rel_err);
    out += buf;
  }
  return out;
}

}  // namespace eqflow
