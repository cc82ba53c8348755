#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qlayout/objective.hpp"
#include "qlayout/random.hpp"

namespace qlayout {

enum class Neighborhood { kRandomSwap, kRandomAssignment };

Neighborhood parse_neighborhood(const std::string& s);
std::string to_string(Neighborhood n);

struct SearchConfig {
  Neighborhood neighborhood = Neighborhood::kRandomAssignment;
  int n_iters = 10000;
  int patience = 500;
  std::uint64_t seed = 0;
  CostMode cost_mode = CostMode::kAdjacentFree;
  // Zero the patience counter after every accepted move.
  bool reset_patience = false;
  // Independent searches from the same start; the cheapest wins, ties go to
  // the earliest restart.
  int restarts = 1;

  void validate() const;
};

/// One random move. random_swap exchanges the seats of two logical qubits;
/// random_assignment picks a physical qubit, moves a random logical qubit
/// onto it if it is free and swaps otherwise. The layout must be total.
Layout neighbor(const Layout& layout, Neighborhood kind, Rng& rng);

struct SearchResult {
  Layout layout;
  double cost = 0.0;
  double initial_cost = 0.0;
  int iterations = 0;
  int accepted = 0;
  int restart = 0;
};

/// Strict-improvement hill climbing with a cumulative patience counter:
/// stops once more than `patience` moves have been rejected. With several
/// restarts, `iterations` and `accepted` describe the winning run.
SearchResult local_search(const Layout& initial, const ProgramGraph& pg, const CouplingGraph& cg,
                          const SearchConfig& cfg);

}  // namespace qlayout
