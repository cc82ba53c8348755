#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qlayout/objective.hpp"
#include "qlayout/policy.hpp"
#include "qlayout/random.hpp"

namespace qlayout {

/// Placement state after t steps: logical qubits 0..t-1 are seated.
struct EpisodeState {
  const ProgramGraph* pg = nullptr;
  const CouplingGraph* cg = nullptr;
  Layout layout;
  int current = 0;  // next logical qubit to place
  std::vector<bool> feasible;

  int step() const noexcept { return current; }
  bool terminal() const noexcept { return current == pg->num_logical; }
};

EpisodeState initial_state(const ProgramGraph& pg, const CouplingGraph& cg);
// Seats the current logical qubit on `p`. Throws InfeasibleState if `p` is taken.
void apply_action(EpisodeState& state, PhysicalQubit p);

/// Random program graph: each pair i<j present with probability `edge_prob`,
/// orientation chosen by a fair coin. One-hot features of width
/// max(n, feature_width).
ProgramGraph gen_random_instance(int n, double edge_prob, Rng& rng, int feature_width = 0);

// Replaces node features with the engineered six-feature rows.
void attach_engineered_features(ProgramGraph& pg);

enum class DecodeKind { kGreedy, kSampling, kMultistartGreedy, kMultistartSampling };

DecodeKind parse_decode_kind(const std::string& s);  // also accepts msg / mss
std::string to_string(DecodeKind k);
std::string short_name(DecodeKind k);              // greedy, sampling, msg, mss

struct DecodeStrategy {
  DecodeKind kind = DecodeKind::kGreedy;
  int k = 1;
  std::uint64_t seed = 0;

  static DecodeStrategy make(DecodeKind kind, std::uint64_t seed = 0, int starts = 10);
  void validate() const;
};

// How one decode row picks each action.
enum class StepRule {
  kGreedy,       // argmax, first index on ties
  kSample,       // draw from the masked distribution
  kSampleFirst,  // draw the first action, then argmax
  kForced,       // replay a given action list
};

struct RolloutRequest {
  int instance = 0;  // index into the instance list
  StepRule rule = StepRule::kGreedy;
  std::vector<PhysicalQubit> forced;
};

struct RolloutBatch {
  std::vector<Layout> layouts;
  std::vector<double> costs;
  std::vector<double> log_prob_values;
  ad::Var log_probs;  // rows x 1, summed over steps; on the forward's tape
};

/// Decodes every request in lock-step against one encoder pass.
/// `rngs` holds one engine per request (unused for greedy rows).
RolloutBatch run_rollouts(PolicyForward& fw, const CouplingGraph& cg, const CostModel& cm,
                          std::span<const ProgramGraph* const> instances,
                          std::span<const RolloutRequest> requests, std::span<Rng> rngs);

struct RolloutResult {
  Layout layout;
  double log_prob = 0.0;
  double reward = 0.0;
};

RolloutResult rollout(const ProgramGraph& pg, const CouplingGraph& cg, const PolicyParams& policy,
                      StepRule rule, Rng& rng, CostMode mode = CostMode::kAdjacentFree);

struct DecodeResult {
  Layout layout;
  double cost = 0.0;
  std::vector<double> start_costs;  // one per start, in start order
};

/// Best of the strategy's starts; ties keep the earliest start. Start r uses
/// the stream make_rng(strategy.seed, r).
DecodeResult decode(const ProgramGraph& pg, const CouplingGraph& cg, const PolicyParams& policy,
                    const DecodeStrategy& strategy, CostMode mode = CostMode::kAdjacentFree);

struct TrainConfig {
  int batch_size = 512;
  double lr = 3e-4;
  int epochs = 50;
  int batches_per_epoch = 20;
  int n_min = 6;
  int n_max = 12;
  double edge_prob = 0.3;
  std::uint64_t seed = 1;
  CostMode cost_mode = CostMode::kAdjacentFree;
  int validation_size = 256;
  double bn_momentum = 0.1;
  bool whiten_advantage = false;
  double max_grad_norm = 0.0;  // 0 disables clipping
  // Replaces gen_random_instance for both training and validation draws.
  std::function<ProgramGraph(Rng&)> sampler;

  int instances_per_epoch() const { return batch_size * batches_per_epoch; }
  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double mean_reward = 0.0;
  double baseline = 0.0;
  double grad_norm = 0.0;
  double wallclock_s = 0.0;
  int skipped_batches = 0;
};

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics);
void save_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics);

struct TrainResult {
  PolicyParams policy;
  std::vector<EpochMetrics> metrics;
};

/// Draws a training instance from the configured distribution.
ProgramGraph sample_instance(const TrainConfig& cfg, const PolicyConfig& pcfg, Rng& rng);

// Fixed held-out set for the greedy baseline, derived from cfg.seed.
std::vector<ProgramGraph> validation_set(const TrainConfig& cfg, const PolicyConfig& pcfg);

/// Mean greedy reward (eval mode) over `instances`.
double mean_greedy_reward(const PolicyParams& policy, const CouplingGraph& cg,
                          std::span<const ProgramGraph> instances, CostMode mode);

struct StepReport {
  double loss = 0.0;
  double mean_reward = 0.0;
  double grad_norm = 0.0;
  bool skipped = false;
};

/// One REINFORCE update: sample a rollout per instance,
/// loss = -mean_b (R_b - baseline) * sum_t log pi, then an Adam step.
StepReport reinforce_step(PolicyParams& policy, ad::AdamState<double>& adam, const CouplingGraph& cg,
                          std::span<const ProgramGraph> batch, double baseline, const TrainConfig& cfg,
                          std::span<Rng> rngs);

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Starts from `initial` when given, otherwise from init_policy(pcfg, cfg.seed).
TrainResult train(const TrainConfig& cfg, const PolicyConfig& pcfg, const CouplingGraph& cg,
                  const EpochCallback& on_epoch = {}, const PolicyParams* initial = nullptr);

}  // namespace qlayout
