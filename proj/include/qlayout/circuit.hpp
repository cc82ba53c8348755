#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace qlayout {

using LogicalQubit = int;

struct Gate {
  std::string kind;
  // One operand for single-qubit gates; (control, target) for two-qubit gates.
  // For swap the first operand stands in as the control.
  std::vector<LogicalQubit> qubits;

  bool is_two_qubit() const noexcept { return qubits.size() == 2; }
  LogicalQubit control() const { return qubits.front(); }
  LogicalQubit target() const { return qubits.back(); }
};

struct Circuit {
  int num_qubits = 0;
  std::vector<Gate> gates;

  int two_qubit_gate_count() const;
};

/// Directed multigraph of two-qubit interactions plus per-node features.
struct ProgramGraph {
  struct Edge {
    LogicalQubit from;
    LogicalQubit to;
  };

  int num_logical = 0;
  // One entry per gate occurrence, in circuit order.
  std::vector<Edge> edges;
  // num_logical x feature_dim.
  Eigen::MatrixXd node_features;

  int multiplicity(LogicalQubit from, LogicalQubit to) const;
};

// [mu_s, mu_c, mu_t, influence, pagerank, causal_cone]
inline constexpr int kFeatureDim = 6;
using FeatureVector = std::array<double, kFeatureDim>;

/// Parses the OpenQASM 2.0 subset: qreg/creg, standard single-qubit gates,
/// cx/cz/swap, register broadcast, and measure/barrier/reset (dropped).
/// Gate parameters are parsed and discarded.
Circuit parse_qasm(std::string_view source);
Circuit load_qasm(const std::string& path);

/// Program graph with one-hot features of width `feature_width` (>= n);
/// `feature_width` of 0 means exactly n.
ProgramGraph build_program_graph(const Circuit& c, int feature_width = 0);

// Identity rows of width `width`, padded with zeros past n.
Eigen::MatrixXd one_hot_features(int n, int width);

inline constexpr int kDefaultWalkRadius = 4;

std::vector<FeatureVector> extract_features(const Circuit& c, int walk_radius = kDefaultWalkRadius);

// Feature rows packed into an n x 6 matrix.
Eigen::MatrixXd feature_matrix(const std::vector<FeatureVector>& features);

// One cx per program edge, in edge order. Lets synthetic graphs reuse the
// circuit feature pipeline.
Circuit circuit_from_graph(const ProgramGraph& pg);

std::string circuit_to_qasm(const Circuit& c);

}  // namespace qlayout
