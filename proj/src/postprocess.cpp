#include "qlayout/postprocess.hpp"

#include <utility>

#include "qlayout/error.hpp"

namespace qlayout {

Neighborhood parse_neighborhood(const std::string& s) {
  if (s == "random_swap" || s == "swap") return Neighborhood::kRandomSwap;
  if (s == "random_assignment" || s == "assignment") return Neighborhood::kRandomAssignment;
  throw InvalidArgument("unknown neighborhood '" + s + "' (expected random_swap, random_assignment)");
}

std::string to_string(Neighborhood n) {
  return n == Neighborhood::kRandomSwap ? "random_swap" : "random_assignment";
}

void SearchConfig::validate() const {
  if (n_iters < 1) throw ConfigError("n_iters must be >= 1");
  if (patience < 0) throw ConfigError("patience must be >= 0");
  if (restarts < 1) throw ConfigError("restarts must be >= 1");
}

namespace {

void swap_two(std::vector<PhysicalQubit>& assign, Rng& rng) {
  const auto n = assign.size();
  if (n < 2) return;
  const auto i = uniform_index(rng, n);
  auto j = uniform_index(rng, n - 1);
  if (j >= i) ++j;
  std::swap(assign[i], assign[j]);
}

// Inverse map: logical qubit on each seat, or -1.
std::vector<int> occupants(const Layout& layout) {
  std::vector<int> who(layout.num_physical, -1);
  for (int i = 0; i < layout.num_logical(); ++i) who[layout.assign[i]] = i;
  return who;
}

}  // namespace

Layout neighbor(const Layout& layout, Neighborhood kind, Rng& rng) {
  Layout next = layout;
  const int n = layout.num_logical();
  if (n == 0) return next;
  if (kind == Neighborhood::kRandomSwap) {
    swap_two(next.assign, rng);
    return next;
  }
  const auto seat = static_cast<PhysicalQubit>(uniform_index(rng, layout.num_physical));
  const std::vector<int> who = occupants(layout);
  if (who[seat] < 0) {
    next.assign[uniform_index(rng, n)] = seat;
    return next;
  }
  if (n < 2) return next;
  // Seat is taken: swap its occupant with another assigned logical qubit.
  const int i = who[seat];
  auto j = static_cast<int>(uniform_index(rng, n - 1));
  if (j >= i) ++j;
  std::swap(next.assign[i], next.assign[j]);
  return next;
}

namespace {

SearchResult climb(const Layout& initial, const std::vector<WeightedPair>& pairs, const CostModel& cm,
                   const SearchConfig& cfg, Rng rng) {
  SearchResult r;
  r.layout = initial;
  r.initial_cost = r.cost = swap_cost_unchecked(initial.assign, pairs, cm);
  Layout current = initial;
  double current_cost = r.cost;
  int p = 0;
  for (int i = 1; i <= cfg.n_iters; ++i) {
    r.iterations = i;
    Layout candidate = neighbor(current, cfg.neighborhood, rng);
    const double c = swap_cost_unchecked(candidate.assign, pairs, cm);
    if (c < current_cost) {
      current = std::move(candidate);
      current_cost = c;
      ++r.accepted;
      if (current_cost < r.cost) {
        r.cost = current_cost;
        r.layout = current;
      }
      if (cfg.reset_patience) p = 0;
    } else {
      ++p;
    }
    if (p > cfg.patience) break;
  }
  return r;
}

}  // namespace

SearchResult local_search(const Layout& initial, const ProgramGraph& pg, const CouplingGraph& cg,
                          const SearchConfig& cfg) {
  cfg.validate();
  validate_layout(initial);
  if (initial.num_logical() != pg.num_logical || initial.num_physical != cg.num_physical()) {
    throw ConstraintViolation("layout shape does not match the program and device");
  }
  const CostModel cm(cfg.cost_mode, cg);
  const std::vector<WeightedPair> pairs = collapse_edges(pg);
  SearchResult best = climb(initial, pairs, cm, cfg, make_rng(cfg.seed, 0x10ca1));
  for (int k = 1; k < cfg.restarts; ++k) {
    SearchResult r = climb(initial, pairs, cm, cfg, make_rng(cfg.seed, 0x10ca1 + k));
    if (r.cost < best.cost) {
      best = std::move(r);
      best.restart = k;
    }
  }
  return best;
}

}  // namespace qlayout
