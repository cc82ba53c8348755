#include "qlayout/objective.hpp"

#include <algorithm>
#include <limits>
#include <map>

#include "qlayout/error.hpp"

namespace qlayout {

bool Layout::is_total() const {
  return std::none_of(assign.begin(), assign.end(), [](PhysicalQubit p) { return p == kUnassigned; });
}

bool Layout::is_injective() const {
  std::vector<char> seen(num_physical, 0);
  for (PhysicalQubit p : assign) {
    if (p == kUnassigned) continue;
    if (p < 0 || p >= num_physical || seen[p]) return false;
    seen[p] = 1;
  }
  return true;
}

void validate_layout(const Layout& layout) {
  std::vector<char> seen(layout.num_physical, 0);
  for (int i = 0; i < layout.num_logical(); ++i) {
    const PhysicalQubit p = layout.assign[i];
    if (p == kUnassigned) {
      throw IncompleteLayout("logical qubit " + std::to_string(i) + " is unassigned");
    }
    if (p < 0 || p >= layout.num_physical) {
      throw ConstraintViolation("logical qubit " + std::to_string(i) + " maps to " +
                                std::to_string(p) + ", outside [0," +
                                std::to_string(layout.num_physical) + ")");
    }
    if (seen[p]) {
      throw ConstraintViolation("physical qubit " + std::to_string(p) +
                                " is assigned more than once");
    }
    seen[p] = 1;
  }
}

CostMode parse_cost_mode(const std::string& s) {
  if (s == "literal") return CostMode::kLiteral;
  if (s == "adjacent-free" || s == "adjacent_free") return CostMode::kAdjacentFree;
  throw InvalidArgument("unknown cost mode '" + s + "' (expected literal or adjacent-free)");
}

std::string to_string(CostMode mode) {
  return mode == CostMode::kLiteral ? "literal" : "adjacent-free";
}

std::vector<WeightedPair> collapse_edges(const ProgramGraph& pg) {
  std::map<std::pair<int, int>, int> counts;
  for (const auto& e : pg.edges) ++counts[std::minmax(e.from, e.to)];
  std::vector<WeightedPair> out;
  out.reserve(counts.size());
  for (const auto& [key, c] : counts) out.push_back({key.first, key.second, c});
  return out;
}

double swap_cost_unchecked(const std::vector<PhysicalQubit>& assign,
                           const std::vector<WeightedPair>& pairs, const CostModel& cm) {
  double total = 0.0;
  for (const auto& e : pairs) total += e.count * cm.pair_cost(assign[e.a], assign[e.b]);
  return total;
}

double swap_cost(const Layout& layout, const ProgramGraph& pg, const CostModel& cm) {
  if (layout.num_logical() != pg.num_logical) {
    throw ShapeError("layout covers " + std::to_string(layout.num_logical()) +
                     " logical qubits, program has " + std::to_string(pg.num_logical));
  }
  if (layout.num_physical != cm.distance->rows()) {
    throw ShapeError("layout targets " + std::to_string(layout.num_physical) +
                     " physical qubits, distance matrix has " + std::to_string(cm.distance->rows()));
  }
  validate_layout(layout);
  double total = 0.0;
  for (const auto& e : pg.edges) total += cm.pair_cost(layout.assign[e.from], layout.assign[e.to]);
  return total;
}

double reward(const Layout& layout, const ProgramGraph& pg, const CostModel& cm) {
  return -swap_cost(layout, pg, cm);
}

namespace {

class BranchAndBound {
 public:
  BranchAndBound(const ProgramGraph& pg, const CostModel& cm, int N)
      : n_(pg.num_logical), N_(N), cm_(cm), assign_(n_, kUnassigned), used_(N, 0) {
    // earlier[i] lists pairs (j < i) so the partial cost can be extended when i is placed.
    earlier_.assign(n_, {});
    for (const auto& e : collapse_edges(pg)) {
      if (e.a == e.b) continue;
      earlier_[std::max(e.a, e.b)].push_back({std::min(e.a, e.b), e.count});
    }
  }

  OptimalLayout solve() {
    search(0, 0.0);
    return {Layout(N_, best_assign_), best_};
  }

 private:
  void search(int i, double partial) {
    if (found_ && partial >= best_) return;
    if (i == n_) {
      best_ = partial;
      best_assign_ = assign_;
      found_ = true;
      return;
    }
    for (PhysicalQubit p = 0; p < N_; ++p) {
      if (used_[p]) continue;
      double extended = partial;
      for (const auto& [j, count] : earlier_[i]) extended += count * cm_.pair_cost(assign_[j], p);
      used_[p] = 1;
      assign_[i] = p;
      search(i + 1, extended);
      assign_[i] = kUnassigned;
      used_[p] = 0;
    }
  }

  int n_;
  int N_;
  const CostModel& cm_;
  std::vector<std::vector<std::pair<int, int>>> earlier_;
  std::vector<PhysicalQubit> assign_;
  std::vector<char> used_;
  std::vector<PhysicalQubit> best_assign_;
  double best_ = std::numeric_limits<double>::infinity();
  bool found_ = false;
};

}  // namespace

OptimalLayout brute_force_optimal(const ProgramGraph& pg, const CouplingGraph& cg,
                                  const CostModel& cm, std::uint64_t cap) {
  const int n = pg.num_logical;
  const int N = cg.num_physical();
  if (n > N) {
    throw InvalidArgument("program has " + std::to_string(n) + " qubits but device only " +
                          std::to_string(N));
  }
  std::uint64_t injections = 1;
  for (int k = 0; k < n; ++k) {
    injections *= static_cast<std::uint64_t>(N - k);
    if (injections > cap) {
      throw TooLarge("brute force would enumerate more than " + std::to_string(cap) +
                     " injections");
    }
  }
  return BranchAndBound(pg, cm, N).solve();
}

}  // namespace qlayout
