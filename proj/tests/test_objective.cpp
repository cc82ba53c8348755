#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "oracles.hpp"
#include "qlayout/error.hpp"
#include "qlayout/objective.hpp"

using namespace qlayout;

namespace {

ProgramGraph graph_of(int n, std::vector<ProgramGraph::Edge> edges) {
  ProgramGraph pg;
  pg.num_logical = n;
  pg.edges = std::move(edges);
  pg.node_features = one_hot_features(n, n);
  return pg;
}

ProgramGraph k3() { return graph_of(3, {{0, 1}, {1, 2}, {0, 2}}); }

}  // namespace

TEST_CASE("cost of trivial layouts") {
  const CouplingGraph line = build_line(3);
  const CostModel lit(CostMode::kLiteral, line), free(CostMode::kAdjacentFree, line);
  const ProgramGraph empty = graph_of(2, {});
  CHECK(swap_cost(Layout(3, {0, 2}), empty, lit) == 0.0);
  CHECK(swap_cost(Layout(3, {0, 2}), empty, free) == 0.0);
  const ProgramGraph one = graph_of(2, {{0, 1}});
  CHECK(swap_cost(Layout(3, {0, 1}), one, lit) == 2.0);
  CHECK(swap_cost(Layout(3, {0, 1}), one, free) == 0.0);
  CHECK(swap_cost(Layout(3, {0, 2}), one, free) == 2.0);
  CHECK(reward(Layout(3, {1, 2}), one, free) == 0.0);
}

TEST_CASE("K3 on path-3 costs 8 under every bijection") {
  const CouplingGraph line = build_line(3);
  const CostModel lit(CostMode::kLiteral, line);
  std::vector<int> perm{0, 1, 2};
  int count = 0;
  do {
    CHECK(swap_cost(Layout(3, perm), k3(), lit) == 8.0);
    CHECK(reward(Layout(3, perm), k3(), lit) == -8.0);
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));
  CHECK(count == 6);
  CHECK(brute_force_optimal(k3(), line, lit).cost == 8.0);
}

TEST_CASE("layout validation") {
  const CouplingGraph line = build_line(3);
  const CostModel lit(CostMode::kLiteral, line);
  const ProgramGraph one = graph_of(2, {{0, 1}});
  CHECK_THROWS_AS(swap_cost(Layout(3, {0, kUnassigned}), one, lit), IncompleteLayout);
  CHECK_THROWS_AS(swap_cost(Layout(3, {1, 1}), one, lit), ConstraintViolation);
  CHECK_THROWS_AS(swap_cost(Layout(3, {0, 3}), one, lit), ConstraintViolation);
  CHECK_THROWS_AS(swap_cost(Layout(3, {0, 1, 2}), one, lit), ShapeError);
  CHECK(Layout(3, {0, kUnassigned}).is_injective());
  CHECK_FALSE(Layout(3, {0, kUnassigned}).is_total());
  CHECK_FALSE(Layout(3, {2, 2}).is_injective());
}

TEST_CASE("multiplicity, orientation and automorphism invariance") {
  const CouplingGraph g = build_grid(3, 3);
  const CostModel lit(CostMode::kLiteral, g);
  const ProgramGraph once = graph_of(2, {{0, 1}});
  const ProgramGraph thrice = graph_of(2, {{0, 1}, {0, 1}, {0, 1}});
  const ProgramGraph reversed = graph_of(2, {{1, 0}});
  const Layout l(9, {0, 8});
  CHECK(swap_cost(l, thrice, lit) == 3 * swap_cost(l, once, lit));
  CHECK(swap_cost(l, reversed, lit) == swap_cost(l, once, lit));

  // Horizontal mirror of the 3x3 grid.
  auto mirror = [](int p) { return (p / 3) * 3 + (2 - p % 3); };
  Rng rng = make_rng(3);
  for (int t = 0; t < 20; ++t) {
    const ProgramGraph pg = oracle::random_program(4, 0.4, rng);
    std::vector<int> seats(9);
    std::iota(seats.begin(), seats.end(), 0);
    for (int i = 8; i > 0; --i) std::swap(seats[i], seats[uniform_index(rng, i + 1)]);
    std::vector<int> a(seats.begin(), seats.begin() + 4), b(4);
    std::transform(a.begin(), a.end(), b.begin(), mirror);
    CHECK(swap_cost(Layout(9, a), pg, lit) == swap_cost(Layout(9, b), pg, lit));
  }
}

TEST_CASE("brute force against unpruned enumeration") {
  Rng rng = make_rng(21);
  for (int t = 0; t < 60; ++t) {
    const int N = 2 + static_cast<int>(uniform_index(rng, 6));
    const int n = 1 + static_cast<int>(uniform_index(rng, std::min(N, 4)));
    const auto edges = oracle::random_connected_edges(N, 0.2, rng);
    const CouplingGraph cg(N, edges);
    const ProgramGraph pg = oracle::random_program(n, 0.35, rng);
    for (CostMode mode : {CostMode::kLiteral, CostMode::kAdjacentFree}) {
      const CostModel cm(mode, cg);
      const OptimalLayout best = brute_force_optimal(pg, cg, cm);
      const double ref = oracle::exhaustive_min(pg, cg, mode == CostMode::kLiteral);
      REQUIRE(best.cost == ref);
      CHECK(swap_cost(best.layout, pg, cm) == best.cost);
      // Lexicographically smallest among the optima.
      std::vector<int> first;
      oracle::for_each_injection(n, N, [&](const std::vector<int>& a) {
        if (first.empty() && oracle::direct_cost(a, pg, cg.distances(), mode == CostMode::kLiteral) == ref) first = a;
      });
      CHECK(best.layout.assign == first);
    }
  }
}

TEST_CASE("brute force special cases") {
  const CouplingGraph g = build_grid(2, 3);
  // A 4-cycle embeds into the 2x3 grid.
  const ProgramGraph cycle = graph_of(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  CHECK(brute_force_optimal(cycle, g, CostModel(CostMode::kAdjacentFree, g)).cost == 0.0);
  const ProgramGraph one = graph_of(2, {{0, 1}});
  CHECK(brute_force_optimal(one, g, CostModel(CostMode::kLiteral, g)).cost == 2.0);
  CHECK_THROWS_AS(brute_force_optimal(graph_of(7, {}), g, CostModel(CostMode::kLiteral, g)), InvalidArgument);
  const CouplingGraph big = build_grid(8, 8);
  CHECK_THROWS_AS(brute_force_optimal(graph_of(6, {{0, 1}}), big, CostModel(CostMode::kLiteral, big)), TooLarge);
}

TEST_CASE("cost mode names") {
  CHECK(parse_cost_mode("literal") == CostMode::kLiteral);
  CHECK(parse_cost_mode("adjacent-free") == CostMode::kAdjacentFree);
  CHECK(to_string(CostMode::kAdjacentFree) == "adjacent-free");
  CHECK_THROWS_AS(parse_cost_mode("cheap"), InvalidArgument);
}
