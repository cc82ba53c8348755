#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "qlayout/autodiff.hpp"
#include "qlayout/circuit.hpp"
#include "qlayout/topology.hpp"

namespace qlayout {

enum class NormKind { kLayer, kBatch, kGraph };
enum class ContextKind { kProjectConcat, kConcatProject, kStackProject };
// Reduction of the stacked placed embeddings used by kStackProject.
enum class StackPool { kMean, kSum, kLast };
enum class FeatureKind { kOneHot, kEngineered };
// kTrain normalizes with batch statistics; kEval with running averages.
enum class PolicyMode { kTrain, kEval };

NormKind parse_norm_kind(const std::string& s);
ContextKind parse_context_kind(const std::string& s);
StackPool parse_stack_pool(const std::string& s);
FeatureKind parse_feature_kind(const std::string& s);
std::string to_string(NormKind k);
std::string to_string(ContextKind k);
std::string to_string(StackPool k);
std::string to_string(FeatureKind k);

struct EncoderConfig {
  int layers = 4;
  int heads = 8;
  int embed_dim = 128;
  NormKind norm = NormKind::kBatch;
  // Share GAT weights between the program and coupling encoders.
  bool shared = false;

  void validate() const;
};

struct DecoderConfig {
  int heads = 16;
  ContextKind context = ContextKind::kConcatProject;
  double clip = 10.0;
  int context_dim = 128;
  StackPool stack_pool = StackPool::kMean;

  void validate(const EncoderConfig& enc) const;
};

struct PolicyConfig {
  EncoderConfig encoder;
  DecoderConfig decoder;
  FeatureKind features = FeatureKind::kOneHot;
  // Largest program the one-hot input layer accepts.
  int n_max = 12;
  int num_physical = 0;
  std::string device_name;
  std::string device_hash;

  int program_feature_dim() const { return features == FeatureKind::kOneHot ? n_max : kFeatureDim; }
  void validate() const;
};

/// Named dense parameters plus non-trainable buffers (running statistics).
class ParamStore {
 public:
  int add(const std::string& name, Eigen::MatrixXd init);
  int index(const std::string& name) const;
  bool contains(const std::string& name) const { return lookup_.count(name) > 0; }

  Eigen::MatrixXd& value(const std::string& name) { return values_[index(name)]; }
  const Eigen::MatrixXd& value(const std::string& name) const { return values_[index(name)]; }

  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Eigen::MatrixXd>& values() noexcept { return values_; }
  const std::vector<Eigen::MatrixXd>& values() const noexcept { return values_; }

  std::map<std::string, Eigen::MatrixXd>& buffers() noexcept { return buffers_; }
  const std::map<std::string, Eigen::MatrixXd>& buffers() const noexcept { return buffers_; }

 private:
  std::vector<std::string> names_;
  std::vector<Eigen::MatrixXd> values_;
  std::map<std::string, int> lookup_;
  std::map<std::string, Eigen::MatrixXd> buffers_;
};

struct PolicyParams {
  PolicyConfig config;
  ParamStore store;
};

/// Fresh parameters: every weight matrix uniform in +-1/sqrt(fan_in),
/// normalization scales 1 and shifts 0. Deterministic in `seed`.
PolicyParams init_policy(const PolicyConfig& config, std::uint64_t seed);

// Node features the policy expects for this program graph: one-hot padded to
// n_max, or the engineered features already stored on the graph.
Eigen::MatrixXd program_inputs(const PolicyParams& policy, const ProgramGraph& pg);

/// Graphs stacked into one node matrix with their message edges
/// (self-loops plus both directions of every edge occurrence).
struct GraphBatch {
  Eigen::MatrixXd features;
  std::vector<int> src;
  std::vector<int> dst;
  std::vector<int> graph_of_node;
  std::vector<int> offsets;  // first node row of each graph
  std::vector<int> sizes;
  int num_graphs = 0;

  int num_nodes() const { return static_cast<int>(graph_of_node.size()); }
};

GraphBatch stack_program_graphs(const PolicyParams& policy,
                                std::span<const ProgramGraph* const> graphs);
GraphBatch coupling_batch(const CouplingGraph& cg);

/// One forward pass: the tape, the parameters bound to it, and the running
/// statistics observed in train mode (applied by the caller afterwards).
class PolicyForward {
 public:
  PolicyForward(ad::Tape& tape, const PolicyParams& policy, PolicyMode mode, bool requires_grad);

  ad::Tape& tape() const { return tape_; }
  const PolicyParams& policy() const { return policy_; }
  const PolicyConfig& config() const { return policy_.config; }
  PolicyMode mode() const { return mode_; }

  ad::Var param(const std::string& name) const { return bound_[policy_.store.index(name)]; }
  ad::Var constant(Eigen::MatrixXd m) const { return tape_.constant(std::move(m)); }

  // Gradients of every parameter after tape().backward(); store order.
  std::vector<Eigen::MatrixXd> gradients() const;

  // Batch statistics keyed by buffer prefix, recorded in train mode.
  const std::map<std::string, ad::NormStats>& observed_stats() const { return stats_; }
  void observe(const std::string& prefix, ad::NormStats s) { stats_[prefix] = std::move(s); }

 private:
  ad::Tape& tape_;
  const PolicyParams& policy_;
  PolicyMode mode_;
  std::vector<ad::Var> bound_;
  std::map<std::string, ad::NormStats> stats_;
};

// Folds batch statistics into the running averages with the given momentum.
void update_running_stats(PolicyParams& policy, const std::map<std::string, ad::NormStats>& stats,
                          double momentum);

enum class GraphRole { kProgram, kPhysical };

/// GAT encoder over a stacked batch; returns num_nodes x d_e embeddings.
ad::Var encode_batch(PolicyForward& fw, const GraphBatch& batch, GraphRole role);

/// Keys and values the decoder attends over; computed once per forward.
struct DecoderCache {
  ad::Var glimpse_keys;
  ad::Var glimpse_values;
  ad::Var pointer_keys;
};

DecoderCache prepare_decoder(PolicyForward& fw, const ad::Var& physical);

/// Context queries for a batch of decode rows. `current` and `previous` are
/// row indices into `program`; previous[r] < 0 selects the learned start
/// token. `stacked[r]` lists the rows pooled by the stack context.
ad::Var context_batch(PolicyForward& fw, const ad::Var& program, const std::vector<int>& current,
                      const std::vector<int>& previous,
                      const std::vector<std::vector<int>>& stacked);

/// Clipped pointer logits (rows x N). `infeasible`, when non-null, masks
/// physical qubits out of the glimpse attention.
ad::Var pointer_logits_batch(PolicyForward& fw, const DecoderCache& cache, const ad::Var& context,
                             const ad::Mask* infeasible);

/// log pi(a | s): infeasible entries are -inf. Throws InfeasibleState if a
/// row has no feasible action.
ad::Var masked_log_probs(const ad::Var& logits, const ad::Mask& infeasible);

// Single-instance conveniences over the batched forward (no gradients).

struct NodeEmbeddings {
  Eigen::MatrixXd program;   // n x d_e
  Eigen::MatrixXd physical;  // N x d_e
};

NodeEmbeddings encode(const ProgramGraph& pg, const CouplingGraph& cg, const PolicyParams& policy,
                      PolicyMode mode = PolicyMode::kEval);

// `history` lists logical qubits already placed, oldest first.
Eigen::VectorXd make_context(const NodeEmbeddings& emb, int current, std::span<const int> history,
                             const PolicyParams& policy);

// `assigned` (size N, optional) masks taken seats out of the glimpse.
Eigen::VectorXd pointer_logits(const Eigen::VectorXd& context, const Eigen::MatrixXd& physical,
                               const PolicyParams& policy,
                               const std::vector<bool>* assigned = nullptr);

Eigen::VectorXd masked_distribution(const Eigen::VectorXd& logits, const std::vector<bool>& feasible);

// Checkpoint: {"header": {...}, "params": {name: {shape, values}}, "buffers": {...}}.
std::string checkpoint_to_json(const PolicyParams& policy);
PolicyParams checkpoint_from_json(const std::string& text);
void save_checkpoint(const PolicyParams& policy, const std::string& path);
PolicyParams load_checkpoint(const std::string& path);

}  // namespace qlayout
