#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqflow/flow.hpp"

namespace eqflow {

enum class Terminal { sum, mean, max };

std::string to_string(Terminal t);
Terminal terminal_from_string(const std::string& s);
double terminal_value(Terminal t, std::span<const double> y);
/// Gradient of the terminal map; max routes everything to the first argmax.
void terminal_gradient(Terminal t, std::span<const double> y, std::span<double> out);

/// g ∘ φ for a schedule φ and an invariant terminal g.
struct Model {
  Schedule schedule;
  Terminal terminal = Terminal::sum;
  /// Group record; defaults to the layers' declared group.
  std::string group;
  /// Grid shape of the input (single entry for flat vectors).
  std::vector<std::size_t> dims;
};

double forward(const Model& model, std::span<const double> x);

struct ModelSpec {
  Family family = Family::conv1;
  std::vector<std::size_t> dims{3};
  std::size_t layers = 1;
  Activation activation = Activation::tanh;
  Terminal terminal = Terminal::sum;
  Integrator integrator = Integrator::euler;
  std::size_t steps_per_unit_time = default_steps_per_unit_time;
  double init_lo = -0.5;
  double init_hi = 0.5;
};

/// Unit-duration segments with parameters uniform in [init_lo, init_hi].
Model make_model(const ModelSpec& spec, std::uint64_t seed);

struct TargetFunction {
  std::string tag;
  std::function<double(std::span<const double>)> fn;
  /// Group record the target is invariant under.
  std::string group;
  std::vector<std::size_t> dims;

  double operator()(std::span<const double> x) const { return fn(x); }
};

/// Target factories keyed by tag. Every constructed target is checked for
/// invariance under its declared group on random samples before it is returned.
class TargetRegistry {
 public:
  using Factory = std::function<TargetFunction(const std::vector<std::size_t>& dims)>;

  void add(const std::string& tag, Factory factory);
  bool contains(const std::string& tag) const { return factories_.count(tag) != 0; }
  std::vector<std::string> tags() const;
  /// Throws std::invalid_argument for unknown tags or unsupported shapes,
  /// std::logic_error when the invariance check fails.
  TargetFunction make(const std::string& tag, const std::vector<std::size_t>& dims) const;

 private:
  std::map<std::string, Factory> factories_;
};

/// t3_antisym, range, prod, sum_sq, min, row_sq_sum.
const TargetRegistry& register_targets();

/// x -> |G|^-1 sum_g F(g x).
TargetFunction group_average(const TargetFunction& target, const PermGroup& g);

/// Flat row-major sample matrix with target values.
struct Dataset {
  std::size_t n = 0;
  Vector xs;
  Vector ys;
  std::size_t size() const { return ys.size(); }
  std::span<const double> x(std::size_t i) const { return {xs.data() + i * n, n}; }
};

/// `count` points uniform on [-kappa, kappa]^n.
Dataset sample_dataset(const TargetFunction& target, std::size_t n, std::size_t count, double kappa,
                       std::uint64_t seed);

struct LossValue {
  double mse = 0.0;
  /// sqrt(mse) / rms(target); infinite when the target is identically zero.
  double rel_err = 0.0;
};

LossValue loss(const Model& model, const Dataset& data, std::size_t threads = 1);
LossValue loss(const Model& model, const TargetFunction& target, std::span<const Vector> samples);

struct TrainConfig {
  double kappa = 1.0;
  std::size_t train_samples = 4096;
  std::size_t test_samples = 10000;
  double learning_rate = 1e-2;
  double momentum = 0.9;
  std::size_t iterations = 5000;
  std::size_t log_every = 50;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  double divergence_threshold = 1e8;

  void validate() const;
};

struct HistoryRow {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  double test_loss = 0.0;
  double rel_err = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<HistoryRow> history;
  LossValue final_train;
  LossValue final_test;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Mean squared error and its parameter gradient over the dataset, reduced in
/// fixed 256-sample chunks so the result does not depend on `threads`.
double loss_and_gradient(const Model& model, const Dataset& data, std::span<double> grad, std::size_t threads = 1);

/// Full-batch gradient descent with heavy-ball momentum:
/// v <- momentum*v + grad, theta <- theta - learning_rate*v.
/// Train and test sets come from disjoint sub-seeds of config.seed.
TrainResult train(const Model& model, const TargetFunction& target, const TrainConfig& config);

/// Comma-separated history with a header row.
std::string history_csv(const std::vector<HistoryRow>& history);

}  // namespace eqflow
