#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qlayout/circuit.hpp"
#include "qlayout/objective.hpp"
#include "qlayout/policy.hpp"
#include "qlayout/postprocess.hpp"
#include "qlayout/training.hpp"

namespace qlayout {

struct BenchInstance {
  std::string id;      // file stem
  std::string family;  // stem prefix before the first '_', else "unknown"
  int two_qubit_gates = 0;
  ProgramGraph graph;
};

struct Dataset {
  std::vector<BenchInstance> instances;
  std::vector<std::string> skipped;  // "<file>: <reason>"
};

std::string family_of(const std::string& stem);

// Node features the policy expects: one-hot of width policy n_max or the
// engineered rows.
ProgramGraph prepare_program_graph(const Circuit& c, const PolicyConfig& pcfg);

/// Every *.qasm file in `dir`, sorted by name. Files that fail to parse or do
/// not fit the policy/device are recorded in `skipped`.
Dataset load_dataset(const std::string& dir, const PolicyConfig& pcfg);

using BaselineMap = std::map<std::string, double>;

/// CSV with columns instance,cost (any order, extra columns ignored). A
/// trailing ".qasm" on instance names is dropped.
BaselineMap import_baseline(const std::string& path);
BaselineMap parse_baseline(const std::string& text);

struct BenchRun {
  std::vector<DecodeKind> strategies = {DecodeKind::kGreedy};
  int multistart_k = 10;
  bool postprocess = false;
  SearchConfig search;
  CostMode cost_mode = CostMode::kAdjacentFree;
  std::vector<std::uint64_t> seeds = {1};
  int gate_bucket = 50;
};

struct ReportRow {
  std::string instance;
  std::string family;
  int n = 0;
  int two_qubit_gates = 0;
  std::string strategy;
  std::uint64_t seed = 0;
  double rl_cost = 0.0;
  std::optional<double> pp_cost;
  std::optional<double> baseline_cost;
  double wall_ms_rl = 0.0;
  double wall_ms_pp = 0.0;
};

struct BenchReport {
  std::vector<ReportRow> rows;  // sorted by (instance, strategy, seed)
  std::vector<std::string> skipped;
  std::vector<std::string> warnings;
};

/// Throws ConfigError when the checkpoint was trained for another device.
void check_device(const PolicyParams& policy, const CouplingGraph& cg);

BenchReport run_bench(const BenchRun& run, const PolicyParams& policy, const CouplingGraph& cg,
                      const Dataset& data, const BaselineMap* baseline = nullptr);

void write_report_csv(std::ostream& out, const BenchReport& report, bool include_timing = true);
std::string summary_json(const BenchReport& report, const BenchRun& run);

/// Program graph whose interactions all lie on device edges under a hidden
/// layout, so an adjacent-free cost of 0 is attainable. The chosen physical
/// qubits form a random connected region; each induced coupling edge is kept
/// with probability `edge_keep` (at least one is always kept when n >= 2).
struct EmbeddableInstance {
  ProgramGraph graph;
  Layout hidden;
};

EmbeddableInstance gen_embeddable_instance(const CouplingGraph& cg, int n, double edge_keep, Rng& rng);

// Writes `count` synthetic circuits named queko_<index>.qasm into `dir`.
void write_synthetic_dataset(const std::string& dir, const CouplingGraph& cg, int count, int n_min,
                             int n_max, double edge_keep, std::uint64_t seed);

/// Trains one policy per context kind on the same config and reports the mean
/// cost of each decoding strategy on `eval` (rows: context kinds).
struct AblationRow {
  ContextKind context;
  std::map<DecodeKind, double> mean_cost;
};

std::vector<AblationRow> run_context_ablation(const TrainConfig& tcfg, const PolicyConfig& pcfg,
                                              const CouplingGraph& cg,
                                              const std::vector<ProgramGraph>& eval, int multistart_k,
                                              std::uint64_t decode_seed);

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows);

}  // namespace qlayout
