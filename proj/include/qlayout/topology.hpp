#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace qlayout {

using PhysicalQubit = int;

// Hop counts between every pair of physical qubits.
using DistanceMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Undirected device connectivity with its all-pairs distance matrix.
///
/// Construction validates the edge list (no self-loops, no duplicates,
/// endpoints in range) and requires the graph to be connected; the distance
/// matrix is computed eagerly and never changes afterwards.
class CouplingGraph {
 public:
  using Edge = std::pair<PhysicalQubit, PhysicalQubit>;

  CouplingGraph(int num_physical, std::vector<Edge> edges, std::string name = "custom");

  int num_physical() const noexcept { return num_physical_; }
  const std::vector<Edge>& edges() const noexcept { return edges_; }
  const std::string& name() const noexcept { return name_; }
  const std::vector<std::vector<PhysicalQubit>>& neighbors() const noexcept { return adjacency_; }
  const DistanceMatrix& distances() const noexcept { return distances_; }
  int distance(PhysicalQubit p, PhysicalQubit k) const { return distances_(p, k); }
  int degree(PhysicalQubit p) const { return static_cast<int>(adjacency_[p].size()); }
  int max_degree() const;

  /// FNV-1a over N and the sorted edge list; identifies a device in checkpoints.
  std::string topology_hash() const;

 private:
  int num_physical_;
  std::vector<Edge> edges_;  // normalized (lo, hi), sorted
  std::string name_;
  std::vector<std::vector<PhysicalQubit>> adjacency_;
  DistanceMatrix distances_;
};

// `rows x cols` 4-neighbour lattice, node index = row * cols + col.
CouplingGraph build_grid(int rows, int cols);

// Path 0 - 1 - ... - (n-1).
CouplingGraph build_line(int n);

// IBM 65-qubit heavy-hex (Hummingbird) lattice.
CouplingGraph build_heavy_hex();

/// BFS from every source. Throws TopologyError if some pair is unreachable.
DistanceMatrix all_pairs_distances(int num_physical,
                                   const std::vector<std::vector<PhysicalQubit>>& adjacency);

// Resolves a device spec: "gridRxC", "lineN", "heavyhex" (or "heavyhex65"),
// otherwise a path to an edge-list JSON file.
CouplingGraph parse_device(const std::string& spec);

CouplingGraph load_coupling_graph(const std::string& path);
CouplingGraph coupling_graph_from_json(const std::string& text);
std::string coupling_graph_to_json(const CouplingGraph& g);

}  // namespace qlayout
