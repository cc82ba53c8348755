#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "qlayout/error.hpp"
#include "qlayout/topology.hpp"

using namespace qlayout;

#ifndef QLAYOUT_SOURCE_DIR
#define QLAYOUT_SOURCE_DIR "."
#endif

TEST_CASE("grid sizes and indexing") {
  const CouplingGraph g88 = build_grid(8, 8);
  CHECK(g88.num_physical() == 64);
  CHECK(g88.edges().size() == 112);

  const CouplingGraph g11 = build_grid(1, 1);
  CHECK(g11.num_physical() == 1);
  CHECK(g11.edges().empty());

  const CouplingGraph g22 = build_grid(2, 2);
  CHECK(g22.edges().size() == 4);
  CHECK(g22.distance(0, 3) == 2);
  CHECK(g22.distance(1, 2) == 2);
  for (int p = 0; p < 4; ++p) CHECK(g22.degree(p) == 2);

  for (int r = 1; r <= 5; ++r) {
    for (int c = 1; c <= 5; ++c) {
      CHECK(build_grid(r, c).edges().size() == static_cast<std::size_t>(r * (c - 1) + c * (r - 1)));
    }
  }
  // Node r*cols + c neighbours (r, c+1).
  const CouplingGraph g34 = build_grid(3, 4);
  CHECK(g34.distance(1 * 4 + 2, 1 * 4 + 3) == 1);
  CHECK(g34.distance(0, 2 * 4 + 3) == 5);
  CHECK(g34.name() == "grid3x4");

  CHECK_THROWS_AS(build_grid(0, 3), InvalidArgument);
  CHECK_THROWS_AS(build_grid(3, 0), InvalidArgument);
}

TEST_CASE("line graph") {
  const CouplingGraph l = build_line(3);
  CHECK(l.distance(0, 2) == 2);
  CHECK(l.edges().size() == 2);
}

TEST_CASE("heavy-hex lattice") {
  const CouplingGraph h = build_heavy_hex();
  CHECK(h.num_physical() == 65);
  CHECK(h.max_degree() == 3);
  CHECK(h.edges().size() == 72);
  // Connected: every distance is finite (construction would have thrown).
  CHECK(h.distances().minCoeff() == 0);
  // Spot-check the bridge pattern: qubit 10 joins 0 and 13, qubit 54 joins 51 and 64.
  std::set<std::pair<int, int>> e(h.edges().begin(), h.edges().end());
  CHECK(e.count({0, 10}));
  CHECK(e.count({10, 13}));
  CHECK(e.count({51, 54}));
  CHECK(e.count({54, 64}));
  CHECK(e.count({9, 10}) == 0);
  // 24 bridge anchors, 8 of which sit on chain ends.
  int deg3 = 0, deg1 = 0;
  for (int p = 0; p < 65; ++p) {
    deg3 += h.degree(p) == 3;
    deg1 += h.degree(p) == 1;
  }
  CHECK(deg1 == 2);  // qubits 9 and 55 close their chains without a bridge
  CHECK(deg3 == 16);
}

TEST_CASE("heavy-hex data file matches the generator") {
  const CouplingGraph from_file = load_coupling_graph(std::string(QLAYOUT_SOURCE_DIR) + "/data/heavyhex65.json");
  const CouplingGraph built = build_heavy_hex();
  CHECK(from_file.edges() == built.edges());
  CHECK(from_file.topology_hash() == built.topology_hash());
}

TEST_CASE("distances match a BFS oracle and satisfy metric properties") {
  Rng rng = make_rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(uniform_index(rng, 40));
    const auto edges = oracle::random_connected_edges(n, 0.05, rng);
    const CouplingGraph g(n, edges);
    const auto ref = oracle::bfs_distances(n, edges);
    const DistanceMatrix& d = g.distances();
    for (int a = 0; a < n; ++a) {
      CHECK(d(a, a) == 0);
      for (int b = 0; b < n; ++b) {
        REQUIRE(d(a, b) == ref[a][b]);
        CHECK(d(a, b) == d(b, a));
        const int k = static_cast<int>(uniform_index(rng, n));
        CHECK(d(a, b) <= d(a, k) + d(k, b));
      }
    }
    for (auto [a, b] : g.edges()) CHECK(d(a, b) == 1);
  }
}

TEST_CASE("invalid graphs are rejected") {
  CHECK_THROWS_AS(CouplingGraph(3, {{0, 0}, {1, 2}}), TopologyError);
  CHECK_THROWS_AS(CouplingGraph(3, {{0, 1}, {1, 0}, {1, 2}}), TopologyError);
  CHECK_THROWS_AS(CouplingGraph(3, {{0, 3}}), TopologyError);
  CHECK_THROWS_AS(CouplingGraph(4, {{0, 1}, {2, 3}}), TopologyError);
  CHECK_THROWS_AS(CouplingGraph(0, {}), InvalidArgument);
}

TEST_CASE("device specs and JSON round trip") {
  CHECK(parse_device("grid4x4").num_physical() == 16);
  CHECK(parse_device("line5").num_physical() == 5);
  CHECK(parse_device("heavyhex").num_physical() == 65);
  const CouplingGraph g = build_grid(3, 3);
  const CouplingGraph back = coupling_graph_from_json(coupling_graph_to_json(g));
  CHECK(back.edges() == g.edges());
  CHECK(back.name() == g.name());
  CHECK(back.topology_hash() == g.topology_hash());
  CHECK(build_grid(3, 3).topology_hash() != build_grid(1, 9).topology_hash());
  CHECK_THROWS_AS(coupling_graph_from_json("{\"n\": 3, \"edges\": [[0]]}"), ParseError);
  CHECK_THROWS_AS(coupling_graph_from_json("not json"), ParseError);
}
