#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eqflow/report.hpp"

namespace eqflow {

using Vector = std::vector<double>;

/// A bijection of {1..n}. Indices are 1-based at every public entry point;
/// storage is 0-based.
class Permutation {
 public:
  Permutation() = default;

  static Permutation identity(std::size_t n);
  /// `images[i-1]` is the image of i. Throws if not a bijection of {1..n}.
  static Permutation from_images(const std::vector<std::size_t>& images);
  static Permutation transposition(std::size_t n, std::size_t i, std::size_t j);
  /// Shift t(i) = i+1 with periodic wrap (t(n) = 1).
  static Permutation shift(std::size_t n);
  /// Parses cycle notation such as "(1 2)(3 4 5)"; "()" is the identity.
  static Permutation parse_cycles(std::size_t n, const std::string& text);

  std::size_t degree() const noexcept { return map_.size(); }
  /// Image of the 1-based index i.
  std::size_t operator()(std::size_t i) const;
  std::size_t image0(std::size_t i) const noexcept { return map_[i]; }
  const std::vector<std::uint32_t>& images0() const noexcept { return map_; }
  std::vector<std::size_t> images() const;

  bool is_identity() const noexcept;
  std::string to_cycles() const;

  auto operator<=>(const Permutation&) const = default;
  bool operator==(const Permutation&) const = default;

 private:
  explicit Permutation(std::vector<std::uint32_t> map) : map_(std::move(map)) {}
  std::vector<std::uint32_t> map_;
};

/// p(i) for a 1-based index; throws std::out_of_range.
std::size_t act_indices(const Permutation& p, std::size_t i);
/// y_i = x_{p(i)}.
Vector act_vector(const Permutation& p, std::span<const double> x);
/// p∘q as maps on indices. act_vector(compose(p,q), x) == act_vector(q, act_vector(p, x)).
Permutation compose(const Permutation& p, const Permutation& q);
Permutation inverse(const Permutation& p);

/// Finite permutation group stored by explicit enumeration (sorted elements).
class PermGroup {
 public:
  static constexpr std::size_t default_cap = 1'000'000;

  PermGroup() = default;

  std::size_t degree() const noexcept { return n_; }
  std::size_t size() const noexcept { return elements_.size(); }
  const std::vector<Permutation>& elements() const noexcept { return elements_; }
  const std::vector<Permutation>& generators() const noexcept { return generators_; }
  bool contains(const Permutation& p) const;

  /// Text record the group was built from ("symmetric 3", "product 2 3", ...).
  const std::string& descriptor() const noexcept { return descriptor_; }
  void set_descriptor(std::string d) { descriptor_ = std::move(d); }

  bool operator==(const PermGroup& other) const { return n_ == other.n_ && elements_ == other.elements_; }

 private:
  friend PermGroup generate_group(std::size_t, const std::vector<Permutation>&, std::size_t);
  friend PermGroup stabilizer(const PermGroup&, std::size_t);
  std::size_t n_ = 0;
  std::vector<Permutation> elements_;
  std::vector<Permutation> generators_;
  std::string descriptor_;
};

/// Smallest subgroup containing `generators`, by breadth-first closure.
/// Throws std::length_error when the group would exceed `cap` elements.
PermGroup generate_group(std::size_t n, const std::vector<Permutation>& generators,
                         std::size_t cap = PermGroup::default_cap);

bool is_transitive(const PermGroup& g);
PermGroup stabilizer(const PermGroup& g, std::size_t i);

/// Coset representatives of G in S_n.
///
/// Cosets are taken in the order of the vector action: a and b share a coset
/// when b = a∘g for some g in G. With this orientation g(Q_a) = Q_{a∘g}, so
/// the translates g(Q_A) tile the general-position points of R^n.
struct Transversal {
  std::vector<Permutation> reps;
};

/// Largest degree for which S_n is enumerated.
inline constexpr std::size_t max_transversal_degree = 8;

/// Lexicographically smallest representative of every coset; n <= 8.
Transversal right_transversal(const PermGroup& g);
/// Both transversal axioms, checked exhaustively over S_n (n <= 8).
bool is_transversal(const PermGroup& g, const Transversal& t);
/// Another valid transversal (lexicographically largest representatives).
Transversal right_transversal_max(const PermGroup& g);

/// All n! permutations in lexicographic order of their images.
std::vector<Permutation> all_permutations(std::size_t n);

bool is_general_position(std::span<const double> x);
/// Rounds coordinates onto a grid of spacing `tol` (tol == 0 leaves x unchanged).
Vector snap_coordinates(std::span<const double> x, double tol);
/// x_{a^-1(1)} > x_{a^-1(2)} > ... > x_{a^-1(n)}.
bool in_cross_section(std::span<const double> x, const Permutation& a);
/// The unique a with x in Q_a, or nullopt when x is not in general position.
std::optional<Permutation> locate_cross_section(std::span<const double> x);

/// g(x^i) = x^j implies g = identity and i = j.
bool is_g_distinct(const PermGroup& g, const std::vector<Vector>& points);

/// Counts, for every general-position point, the translates g(Q_a) (g in G,
/// a in A) containing it; anything other than exactly one is a violation.
/// Non-general-position points are counted under metrics["boundary"].
VerificationReport partition_check_points(const PermGroup& g, const Transversal& a,
                                          const std::vector<Vector>& points);
VerificationReport partition_check(const PermGroup& g, const Transversal& a,
                                   std::size_t sample_count, std::uint64_t seed);

// Builders. Multi-axis groups act on the row-major flattening of the grid.

PermGroup trivial_group(std::size_t n);
PermGroup symmetric_group(std::size_t n);
PermGroup translation_group_1d(std::size_t n);
PermGroup translation_group_nd(const std::vector<std::size_t>& dims);
/// S_{d1} x S_{d2} x ... acting axis-wise.
PermGroup product_permutation_group(const std::vector<std::size_t>& dims);

/// Row-major flattening; both sides 0-based.
std::size_t flatten_index(const std::vector<std::size_t>& dims, const std::vector<std::size_t>& multi);
std::vector<std::size_t> unflatten_index(const std::vector<std::size_t>& dims, std::size_t flat);
std::size_t product_of(const std::vector<std::size_t>& dims);

/// Builds a group from its text record:
///   "symmetric N" | "trivial N" | "translation_1d N" | "translation_nd D1 D2 ..."
///   | "product D1 D2 ..." | "cycles N (1 2)(3 4); (1 2 3 4)"
PermGroup parse_group(const std::string& record);

}  // namespace eqflow
