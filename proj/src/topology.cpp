#include "qlayout/topology.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <queue>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "qlayout/error.hpp"

namespace qlayout {

CouplingGraph::CouplingGraph(int num_physical, std::vector<Edge> edges, std::string name)
    : num_physical_(num_physical), name_(std::move(name)) {
  if (num_physical < 1) {
    throw InvalidArgument("coupling graph needs at least one physical qubit");
  }
  for (auto& [a, b] : edges) {
    if (a < 0 || b < 0 || a >= num_physical || b >= num_physical) {
      throw TopologyError("edge (" + std::to_string(a) + "," + std::to_string(b) +
                          ") has an endpoint outside [0," + std::to_string(num_physical) + ")");
    }
    if (a == b) {
      throw TopologyError("self-loop on physical qubit " + std::to_string(a));
    }
    if (a > b) std::swap(a, b);
  }
  std::sort(edges.begin(), edges.end());
  if (auto dup = std::adjacent_find(edges.begin(), edges.end()); dup != edges.end()) {
    throw TopologyError("duplicate edge (" + std::to_string(dup->first) + "," +
                        std::to_string(dup->second) + ")");
  }
  edges_ = std::move(edges);

  adjacency_.assign(num_physical, {});
  for (const auto& [a, b] : edges_) {
    adjacency_[a].push_back(b);
    adjacency_[b].push_back(a);
  }
  for (auto& nbrs : adjacency_) std::sort(nbrs.begin(), nbrs.end());
  distances_ = all_pairs_distances(num_physical_, adjacency_);
}

int CouplingGraph::max_degree() const {
  int best = 0;
  for (const auto& nbrs : adjacency_) best = std::max(best, static_cast<int>(nbrs.size()));
  return best;
}

std::string CouplingGraph::topology_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  feed(static_cast<std::uint64_t>(num_physical_));
  for (const auto& [a, b] : edges_) {
    feed(static_cast<std::uint64_t>(a));
    feed(static_cast<std::uint64_t>(b));
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

DistanceMatrix all_pairs_distances(int num_physical,
                                   const std::vector<std::vector<PhysicalQubit>>& adjacency) {
  DistanceMatrix dist = DistanceMatrix::Constant(num_physical, num_physical, -1);
  std::vector<PhysicalQubit> frontier;
  frontier.reserve(num_physical);
  for (int src = 0; src < num_physical; ++src) {
    frontier.clear();
    frontier.push_back(src);
    dist(src, src) = 0;
    for (std::size_t head = 0; head < frontier.size(); ++head) {
      const PhysicalQubit u = frontier[head];
      for (PhysicalQubit v : adjacency[u]) {
        if (dist(src, v) < 0) {
          dist(src, v) = dist(src, u) + 1;
          frontier.push_back(v);
        }
      }
    }
    if (static_cast<int>(frontier.size()) != num_physical) {
      throw TopologyError("coupling graph is disconnected: qubit " + std::to_string(src) +
                          " reaches only " + std::to_string(frontier.size()) + " of " +
                          std::to_string(num_physical) + " qubits");
    }
  }
  return dist;
}

CouplingGraph build_grid(int rows, int cols) {
  if (rows < 1 || cols < 1) {
    throw InvalidArgument("grid dimensions must be positive, got " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  }
  std::vector<CouplingGraph::Edge> edges;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int id = r * cols + c;
      if (c + 1 < cols) edges.emplace_back(id, id + 1);
      if (r + 1 < rows) edges.emplace_back(id, id + cols);
    }
  }
  return CouplingGraph(rows * cols, std::move(edges),
                       "grid" + std::to_string(rows) + "x" + std::to_string(cols));
}

CouplingGraph build_line(int n) {
  if (n < 1) throw InvalidArgument("line length must be positive");
  std::vector<CouplingGraph::Edge> edges;
  for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
  return CouplingGraph(n, std::move(edges), "line" + std::to_string(n));
}

CouplingGraph build_heavy_hex() {
  // Five chains of qubits. Columns run 0..10; the top chain is missing column
  // 10 and the bottom chain is missing column 0. Between consecutive chains a
  // bridge qubit links the same column of both, at columns {0,4,8} after an
  // even chain and {2,6,10} after an odd one.
  constexpr int kChains = 5;
  constexpr int kCols = 11;
  std::vector<int> first_col(kChains, 0), last_col(kChains, kCols - 1);
  last_col[0] = kCols - 2;
  first_col[kChains - 1] = 1;

  std::vector<std::vector<int>> chain_ids(kChains, std::vector<int>(kCols, -1));
  std::vector<CouplingGraph::Edge> edges;
  int next = 0;
  for (int r = 0; r < kChains; ++r) {
    for (int c = first_col[r]; c <= last_col[r]; ++c) {
      chain_ids[r][c] = next++;
      if (c > first_col[r]) edges.emplace_back(chain_ids[r][c - 1], chain_ids[r][c]);
    }
    if (r + 1 == kChains) break;
    // Bridge qubits are numbered after this chain and before the next one;
    // the next chain's ids are fixed once we know how many bridges precede it.
    const int bridge_base = next;
    const int next_base = bridge_base + 3;
    const int next_first = first_col[r + 1];
    for (int b = 0; b < 3; ++b) {
      const int col = (r % 2 == 0 ? 0 : 2) + 4 * b;
      const int bridge = bridge_base + b;
      edges.emplace_back(chain_ids[r][col], bridge);
      edges.emplace_back(bridge, next_base + (col - next_first));
    }
    next = next_base;
  }
  return CouplingGraph(next, std::move(edges), "heavyhex65");
}

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

CouplingGraph coupling_graph_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    const int n = j.at("n").get<int>();
    std::vector<CouplingGraph::Edge> edges;
    for (const auto& e : j.at("edges")) {
      if (e.size() != 2) throw ParseError("edge entries must be [a, b] pairs");
      edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    return CouplingGraph(n, std::move(edges), j.value("name", std::string("custom")));
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("edge-list JSON: ") + ex.what());
  }
}

CouplingGraph load_coupling_graph(const std::string& path) {
  return coupling_graph_from_json(read_file(path));
}

std::string coupling_graph_to_json(const CouplingGraph& g) {
  nlohmann::json j;
  j["n"] = g.num_physical();
  j["edges"] = nlohmann::json::array();
  for (const auto& [a, b] : g.edges()) j["edges"].push_back({a, b});
  j["name"] = g.name();
  return j.dump();
}

CouplingGraph parse_device(const std::string& spec) {
  std::smatch m;
  static const std::regex grid(R"(grid(\d+)x(\d+))");
  static const std::regex line(R"(line(\d+))");
  if (std::regex_match(spec, m, grid)) return build_grid(std::stoi(m[1]), std::stoi(m[2]));
  if (std::regex_match(spec, m, line)) return build_line(std::stoi(m[1]));
  if (spec == "heavyhex" || spec == "heavyhex65" || spec == "heavy-hex") return build_heavy_hex();
  return load_coupling_graph(spec);
}

}  // namespace qlayout
