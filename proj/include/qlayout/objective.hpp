#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qlayout/circuit.hpp"
#include "qlayout/topology.hpp"

namespace qlayout {

inline constexpr PhysicalQubit kUnassigned = -1;

/// Injective map from logical to physical qubits; assign[i] == kUnassigned
/// marks a logical qubit that has not been placed yet.
struct Layout {
  int num_physical = 0;
  std::vector<PhysicalQubit> assign;

  Layout() = default;
  Layout(int n, int N) : num_physical(N), assign(n, kUnassigned) {}
  Layout(int N, std::vector<PhysicalQubit> a) : num_physical(N), assign(std::move(a)) {}

  int num_logical() const noexcept { return static_cast<int>(assign.size()); }
  bool is_total() const;
  bool is_injective() const;

  friend bool operator==(const Layout&, const Layout&) = default;
};

// Throws IncompleteLayout / ConstraintViolation unless the layout is total,
// injective and in range.
void validate_layout(const Layout& layout);

enum class CostMode {
  kLiteral,       // r(p,k) = 2 d(p,k)
  kAdjacentFree,  // r(p,k) = 2 (d(p,k) - 1)
};

CostMode parse_cost_mode(const std::string& s);
std::string to_string(CostMode mode);

struct CostModel {
  CostMode mode = CostMode::kAdjacentFree;
  const DistanceMatrix* distance = nullptr;

  CostModel(CostMode m, const DistanceMatrix& d) : mode(m), distance(&d) {}
  CostModel(CostMode m, const CouplingGraph& g) : mode(m), distance(&g.distances()) {}

  // SWAP count for one interaction placed at (p, k).
  double pair_cost(PhysicalQubit p, PhysicalQubit k) const {
    const int d = (*distance)(p, k);
    return mode == CostMode::kLiteral ? 2.0 * d : 2.0 * (d - 1);
  }
};

/// Sum over program edges (with multiplicity) of r(assign[from], assign[to]).
double swap_cost(const Layout& layout, const ProgramGraph& pg, const CostModel& cm);

/// Negated swap cost: the terminal reward of a placement episode.
double reward(const Layout& layout, const ProgramGraph& pg, const CostModel& cm);

/// Program edges collapsed to unordered pairs with multiplicities.
struct WeightedPair {
  LogicalQubit a;
  LogicalQubit b;
  int count;
};
std::vector<WeightedPair> collapse_edges(const ProgramGraph& pg);

// Same value as swap_cost, without validation, for inner loops.
double swap_cost_unchecked(const std::vector<PhysicalQubit>& assign,
                           const std::vector<WeightedPair>& pairs, const CostModel& cm);

struct OptimalLayout {
  Layout layout;
  double cost;
};

inline constexpr std::uint64_t kDefaultBruteForceCap = 10'000'000;

/// Exhaustive minimum over all injections with branch-and-bound on the
/// partial cost. Ties resolve to the lexicographically smallest assignment.
/// Throws TooLarge when N!/(N-n)! exceeds `cap`.
OptimalLayout brute_force_optimal(const ProgramGraph& pg, const CouplingGraph& cg,
                                  const CostModel& cm,
                                  std::uint64_t cap = kDefaultBruteForceCap);

}  // namespace qlayout
