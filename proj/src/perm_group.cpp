#include "eqflow/perm_group.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "eqflow/random.hpp"

namespace eqflow {

// --- Permutation -----------------------------------------------------------

Permutation Permutation::identity(std::size_t n) {
  std::vector<std::uint32_t> m(n);
  std::iota(m.begin(), m.end(), 0u);
  return Permutation(std::move(m));
}

Permutation Permutation::from_images(const std::vector<std::size_t>& images) {
  const std::size_t n = images.size();
  std::vector<std::uint32_t> m(n);
  std::vector<bool> seen(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t img = images[i];
    if (img < 1 || img > n || seen[img - 1])
      throw std::invalid_argument("permutation images must be a bijection of {1.." + std::to_string(n) + "}");
    seen[img - 1] = true;
    m[i] = static_cast<std::uint32_t>(img - 1);
  }
  return Permutation(std::move(m));
}

Permutation Permutation::transposition(std::size_t n, std::size_t i, std::size_t j) {
  if (i < 1 || i > n || j < 1 || j > n) throw std::out_of_range("transposition index out of range");
  auto p = identity(n);
  std::swap(p.map_[i - 1], p.map_[j - 1]);
  return p;
}

Permutation Permutation::shift(std::size_t n) {
  std::vector<std::uint32_t> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = static_cast<std::uint32_t>((i + 1) % n);
  return Permutation(std::move(m));
}

Permutation Permutation::parse_cycles(std::size_t n, const std::string& text) {
  auto result = identity(n);
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
  };
  skip_ws();
  while (pos < text.size()) {
    if (text[pos] != '(') throw std::invalid_argument("cycle notation: expected '(' in \"" + text + "\"");
    const auto close = text.find(')', pos);
    if (close == std::string::npos) throw std::invalid_argument("cycle notation: unbalanced '(' in \"" + text + "\"");
    std::istringstream in(text.substr(pos + 1, close - pos - 1));
    std::vector<std::size_t> cycle;
    std::string tok;
    while (in >> tok) {
      std::size_t used = 0;
      const unsigned long v = std::stoul(tok, &used);
      if (used != tok.size()) throw std::invalid_argument("cycle notation: bad index '" + tok + "'");
      if (v < 1 || v > n) throw std::out_of_range("cycle notation: index " + tok + " outside 1.." + std::to_string(n));
      if (std::find(cycle.begin(), cycle.end(), v) != cycle.end())
        throw std::invalid_argument("cycle notation: repeated index in cycle");
      cycle.push_back(v);
    }
    std::vector<std::size_t> images(n);
    std::iota(images.begin(), images.end(), 1);
    for (std::size_t k = 0; k < cycle.size(); ++k) images[cycle[k] - 1] = cycle[(k + 1) % cycle.size()];
    // Cycles are applied left to right as maps on indices.
    result = compose(from_images(images), result);
    pos = close + 1;
    skip_ws();
  }
  return result;
}

std::size_t Permutation::operator()(std::size_t i) const {
  if (i < 1 || i > map_.size())
    throw std::out_of_range("index " + std::to_string(i) + " outside 1.." + std::to_string(map_.size()));
  return map_[i - 1] + 1;
}

std::vector<std::size_t> Permutation::images() const {
  std::vector<std::size_t> out(map_.size());
  for (std::size_t i = 0; i < map_.size(); ++i) out[i] = map_[i] + 1;
  return out;
}

bool Permutation::is_identity() const noexcept {
  for (std::size_t i = 0; i < map_.size(); ++i)
    if (map_[i] != i) return false;
  return true;
}

std::string Permutation::to_cycles() const {
  std::string out;
  std::vector<bool> seen(map_.size(), false);
  for (std::size_t i = 0; i < map_.size(); ++i) {
    if (seen[i] || map_[i] == i) continue;
    out += '(';
    std::size_t j = i;
    bool first = true;
    while (!seen[j]) {
      seen[j] = true;
      if (!first) out += ' ';
      out += std::to_string(j + 1);
      first = false;
      j = map_[j];
    }
    out += ')';
  }
  return out.empty() ? "()" : out;
}

std::size_t act_indices(const Permutation& p, std::size_t i) { return p(i); }

Vector act_vector(const Permutation& p, std::span<const double> x) {
  if (x.size() != p.degree())
    throw std::invalid_argument("act_vector: vector length " + std::to_string(x.size()) +
                                " != permutation degree " + std::to_string(p.degree()));
  Vector y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[p.image0(i)];
  return y;
}

Permutation compose(const Permutation& p, const Permutation& q) {
  if (p.degree() != q.degree()) throw std::invalid_argument("compose: degree mismatch");
  std::vector<std::size_t> images(p.degree());
  for (std::size_t i = 0; i < images.size(); ++i) images[i] = p.image0(q.image0(i)) + 1;
  return Permutation::from_images(images);
}

Permutation inverse(const Permutation& p) {
  std::vector<std::size_t> images(p.degree());
  for (std::size_t i = 0; i < images.size(); ++i) images[p.image0(i)] = i + 1;
  return Permutation::from_images(images);
}

// --- PermGroup ---------------------------------------------------------------

bool PermGroup::contains(const Permutation& p) const {
  return std::binary_search(elements_.begin(), elements_.end(), p);
}

PermGroup generate_group(std::size_t n, const std::vector<Permutation>& generators, std::size_t cap) {
  for (const auto& g : generators)
    if (g.degree() != n) throw std::invalid_argument("generate_group: generator degree differs from n");

  std::set<Permutation> seen{Permutation::identity(n)};
  std::deque<Permutation> frontier{Permutation::identity(n)};
  while (!frontier.empty()) {
    const Permutation cur = std::move(frontier.front());
    frontier.pop_front();
    for (const auto& g : generators) {
      auto next = compose(g, cur);
      if (seen.insert(next).second) {
        if (seen.size() > cap)
          throw std::length_error("generate_group: group exceeds cap of " + std::to_string(cap) + " elements");
        frontier.push_back(std::move(next));
      }
    }
  }
  PermGroup out;
  out.n_ = n;
  out.elements_.assign(seen.begin(), seen.end());
  out.generators_ = generators;
  return out;
}

bool is_transitive(const PermGroup& g) {
  const std::size_t n = g.degree();
  if (n == 0) return true;
  // Orbit of index 1 covers everything iff transitive.
  std::vector<bool> hit(n, false);
  for (const auto& p : g.elements()) hit[p.image0(0)] = true;
  return std::all_of(hit.begin(), hit.end(), [](bool b) { return b; });
}

PermGroup stabilizer(const PermGroup& g, std::size_t i) {
  if (i < 1 || i > g.degree()) throw std::out_of_range("stabilizer: index out of range");
  PermGroup out;
  out.n_ = g.degree();
  for (const auto& p : g.elements())
    if (p.image0(i - 1) == i - 1) out.elements_.push_back(p);
  for (const auto& p : out.elements_)
    if (!p.is_identity()) out.generators_.push_back(p);
  out.descriptor_ = "stab " + std::to_string(i) + " of " + (g.descriptor().empty() ? "group" : g.descriptor());
  return out;
}

// --- Transversals -------------------------------------------------------------

namespace {

std::size_t factorial(std::size_t n) {
  std::size_t f = 1;
  for (std::size_t k = 2; k <= n; ++k) f *= k;
  return f;
}

/// Lehmer-code rank in lexicographic order.
std::size_t rank_of(const Permutation& p) {
  const std::size_t n = p.degree();
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t smaller = 0;
    for (std::size_t j = i + 1; j < n; ++j)
      if (p.image0(j) < p.image0(i)) ++smaller;
    r += smaller * factorial(n - 1 - i);
  }
  return r;
}

void require_enumerable(const PermGroup& g) {
  if (g.degree() > max_transversal_degree)
    throw std::domain_error("transversal: degree " + std::to_string(g.degree()) + " exceeds " +
                            std::to_string(max_transversal_degree));
}

template <class Order>
Transversal transversal_in_order(const PermGroup& g, Order&& order) {
  require_enumerable(g);
  auto all = all_permutations(g.degree());
  order(all);
  std::vector<bool> assigned(all.size(), false);
  Transversal t;
  for (const auto& b : all) {
    if (assigned[rank_of(b)]) continue;
    t.reps.push_back(b);
    for (const auto& h : g.elements()) assigned[rank_of(compose(b, h))] = true;
  }
  return t;
}

}  // namespace

std::vector<Permutation> all_permutations(std::size_t n) {
  std::vector<std::size_t> images(n);
  std::iota(images.begin(), images.end(), 1);
  std::vector<Permutation> out;
  out.reserve(factorial(n));
  do {
    out.push_back(Permutation::from_images(images));
  } while (std::next_permutation(images.begin(), images.end()));
  return out;
}

Transversal right_transversal(const PermGroup& g) {
  return transversal_in_order(g, [](std::vector<Permutation>&) {});
}

Transversal right_transversal_max(const PermGroup& g) {
  return transversal_in_order(g, [](std::vector<Permutation>& all) { std::reverse(all.begin(), all.end()); });
}

bool is_transversal(const PermGroup& g, const Transversal& t) {
  require_enumerable(g);
  const std::size_t n = g.degree();
  if (t.reps.size() * g.size() != factorial(n)) return false;
  for (std::size_t i = 0; i < t.reps.size(); ++i)
    for (std::size_t j = 0; j < t.reps.size(); ++j)
      if (i != j && g.contains(compose(inverse(t.reps[j]), t.reps[i]))) return false;
  for (const auto& b : all_permutations(n)) {
    const auto b_inv = inverse(b);
    const bool covered = std::any_of(t.reps.begin(), t.reps.end(),
                                     [&](const Permutation& a) { return g.contains(compose(b_inv, a)); });
    if (!covered) return false;
  }
  return true;
}

// --- Cross sections -------------------------------------------------------------

bool is_general_position(std::span<const double> x) {
  if (x.size() < 2) throw std::invalid_argument("is_general_position: need at least 2 coordinates");
  Vector sorted(x.begin(), x.end());
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
}

Vector snap_coordinates(std::span<const double> x, double tol) {
  if (tol < 0) throw std::invalid_argument("snap_coordinates: negative tolerance");
  Vector y(x.begin(), x.end());
  if (tol == 0) return y;
  for (auto& v : y) v = std::round(v / tol) * tol;
  return y;
}

bool in_cross_section(std::span<const double> x, const Permutation& a) {
  if (x.size() != a.degree()) throw std::invalid_argument("in_cross_section: dimension mismatch");
  const auto a_inv = inverse(a);
  for (std::size_t k = 0; k + 1 < x.size(); ++k)
    if (!(x[a_inv.image0(k)] > x[a_inv.image0(k + 1)])) return false;
  return true;
}

std::optional<Permutation> locate_cross_section(std::span<const double> x) {
  if (!is_general_position(x)) return std::nullopt;
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return x[i] > x[j]; });
  // order = a^-1 in 0-based form.
  std::vector<std::size_t> images(x.size());
  for (std::size_t k = 0; k < order.size(); ++k) images[k] = order[k] + 1;
  return inverse(Permutation::from_images(images));
}

bool is_g_distinct(const PermGroup& g, const std::vector<Vector>& points) {
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].size() != g.degree()) throw std::invalid_argument("is_g_distinct: dimension mismatch");
    for (const auto& p : g.elements()) {
      const auto gx = act_vector(p, points[i]);
      for (std::size_t j = 0; j < points.size(); ++j)
        if (gx == points[j] && !(p.is_identity() && i == j)) return false;
    }
  }
  return true;
}

VerificationReport partition_check_points(const PermGroup& g, const Transversal& a,
                                          const std::vector<Vector>& points) {
  VerificationReport report("partition_check", 0.0);
  std::vector<Permutation> g_inverse;
  for (const auto& h : g.elements()) g_inverse.push_back(inverse(h));
  std::size_t boundary = 0;
  for (const auto& x : points) {
    if (!is_general_position(x)) {
      ++boundary;
      continue;
    }
    ++report.samples;
    std::size_t hits = 0;
    for (const auto& h_inv : g_inverse) {
      const auto pulled = act_vector(h_inv, x);  // x in h(Q_a)  <=>  h^-1(x) in Q_a
      for (const auto& rep : a.reps)
        if (in_cross_section(pulled, rep)) ++hits;
    }
    if (hits != 1)
      report.record_violation(static_cast<double>(hits), format_vector(x) + " lies in " + std::to_string(hits) +
                                                             " translates");
  }
  report.metrics["boundary"] = static_cast<double>(boundary);
  report.metrics["group_size"] = static_cast<double>(g.size());
  report.metrics["transversal_size"] = static_cast<double>(a.reps.size());
  return report.finalize();
}

VerificationReport partition_check(const PermGroup& g, const Transversal& a, std::size_t sample_count,
                                   std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vector> points;
  points.reserve(sample_count);
  for (std::size_t s = 0; s < sample_count; ++s) points.push_back(rng.uniform_vector(g.degree(), -1.0, 1.0));
  return partition_check_points(g, a, points);
}

// --- Builders ---------------------------------------------------------------------

std::size_t product_of(const std::vector<std::size_t>& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::size_t flatten_index(const std::vector<std::size_t>& dims, const std::vector<std::size_t>& multi) {
  if (multi.size() != dims.size()) throw std::invalid_argument("flatten_index: rank mismatch");
  std::size_t flat = 0;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (multi[k] >= dims[k]) throw std::out_of_range("flatten_index: index out of range");
    flat = flat * dims[k] + multi[k];
  }
  return flat;
}

std::vector<std::size_t> unflatten_index(const std::vector<std::size_t>& dims, std::size_t flat) {
  std::vector<std::size_t> multi(dims.size());
  for (std::size_t k = dims.size(); k-- > 0;) {
    multi[k] = flat % dims[k];
    flat /= dims[k];
  }
  return multi;
}

namespace {

void require_dims(const std::vector<std::size_t>& dims, const char* who) {
  if (dims.empty()) throw std::invalid_argument(std::string(who) + ": no dimensions given");
  for (auto d : dims)
    if (d == 0) throw std::invalid_argument(std::string(who) + ": zero-length axis");
}

std::string join_dims(const std::vector<std::size_t>& dims) {
  std::string s;
  for (auto d : dims) s += " " + std::to_string(d);
  return s;
}

/// Lifts a permutation of one axis to the flattened grid.
Permutation lift_axis(const std::vector<std::size_t>& dims, std::size_t axis, const Permutation& p) {
  const std::size_t n = product_of(dims);
  std::vector<std::size_t> images(n);
  for (std::size_t flat = 0; flat < n; ++flat) {
    auto multi = unflatten_index(dims, flat);
    multi[axis] = p.image0(multi[axis]);
    images[flat] = flatten_index(dims, multi) + 1;
  }
  return Permutation::from_images(images);
}

}  // namespace

PermGroup trivial_group(std::size_t n) {
  auto g = generate_group(n, {});
  g.set_descriptor("trivial " + std::to_string(n));
  return g;
}

PermGroup symmetric_group(std::size_t n) {
  if (n == 0) throw std::invalid_argument("symmetric_group: n must be positive");
  std::vector<Permutation> gens;
  if (n >= 2) {
    gens.push_back(Permutation::transposition(n, 1, 2));
    gens.push_back(Permutation::shift(n));
  }
  auto g = generate_group(n, gens);
  g.set_descriptor("symmetric " + std::to_string(n));
  return g;
}

PermGroup translation_group_1d(std::size_t n) {
  if (n == 0) throw std::invalid_argument("translation_group_1d: n must be positive");
  auto g = generate_group(n, {Permutation::shift(n)});
  g.set_descriptor("translation_1d " + std::to_string(n));
  return g;
}

PermGroup translation_group_nd(const std::vector<std::size_t>& dims) {
  require_dims(dims, "translation_group_nd");
  std::vector<Permutation> gens;
  for (std::size_t k = 0; k < dims.size(); ++k) gens.push_back(lift_axis(dims, k, Permutation::shift(dims[k])));
  auto g = generate_group(product_of(dims), gens);
  g.set_descriptor("translation_nd" + join_dims(dims));
  return g;
}

PermGroup product_permutation_group(const std::vector<std::size_t>& dims) {
  require_dims(dims, "product_permutation_group");
  std::vector<Permutation> gens;
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] < 2) continue;
    gens.push_back(lift_axis(dims, k, Permutation::transposition(dims[k], 1, 2)));
    gens.push_back(lift_axis(dims, k, Permutation::shift(dims[k])));
  }
  auto g = generate_group(product_of(dims), gens);
  g.set_descriptor("product" + join_dims(dims));
  return g;
}

PermGroup parse_group(const std::string& record) {
  std::istringstream in(record);
  std::string builder;
  if (!(in >> builder)) throw std::invalid_argument("group record is empty");

  auto read_sizes = [&] {
    std::vector<std::size_t> dims;
    std::string tok;
    while (in >> tok) {
      std::size_t used = 0;
      long long v = 0;
      try {
        v = std::stoll(tok, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != tok.size() || v <= 0) throw std::invalid_argument("group record: bad size '" + tok + "'");
      dims.push_back(static_cast<std::size_t>(v));
    }
    if (dims.empty()) throw std::invalid_argument("group record '" + record + "' has no sizes");
    return dims;
  };
  auto single = [&](const std::vector<std::size_t>& dims) {
    if (dims.size() != 1) throw std::invalid_argument("group record '" + record + "' expects one size");
    return dims.front();
  };

  if (builder == "symmetric") return symmetric_group(single(read_sizes()));
  if (builder == "trivial") return trivial_group(single(read_sizes()));
  if (builder == "translation_1d") return translation_group_1d(single(read_sizes()));
  if (builder == "translation_nd") return translation_group_nd(read_sizes());
  if (builder == "product") return product_permutation_group(read_sizes());
  if (builder == "cycles") {
    std::size_t n = 0;
    if (!(in >> n) || n == 0) throw std::invalid_argument("group record 'cycles' needs a degree");
    std::string rest;
    std::getline(in, rest);
    std::vector<Permutation> gens;
    std::stringstream parts(rest);
    std::string part;
    while (std::getline(parts, part, ';')) {
      if (part.find_first_not_of(" \t") == std::string::npos) continue;
      gens.push_back(Permutation::parse_cycles(n, part));
    }
    auto g = generate_group(n, gens);
    g.set_descriptor(record);
    return g;
  }
  throw std::invalid_argument("unknown group builder '" + builder + "'");
}

}  // namespace eqflow
