#include "qlayout/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numeric>
#include <ostream>

#include "qlayout/error.hpp"

namespace qlayout {

using Eigen::MatrixXd;

EpisodeState initial_state(const ProgramGraph& pg, const CouplingGraph& cg) {
  if (pg.num_logical > cg.num_physical()) {
    throw InvalidArgument("program has " + std::to_string(pg.num_logical) + " qubits, device only " +
                          std::to_string(cg.num_physical()));
  }
  EpisodeState s;
  s.pg = &pg;
  s.cg = &cg;
  s.layout = Layout(pg.num_logical, cg.num_physical());
  s.feasible.assign(cg.num_physical(), true);
  return s;
}

void apply_action(EpisodeState& state, PhysicalQubit p) {
  if (state.terminal()) throw InfeasibleState("episode already terminal");
  if (p < 0 || p >= static_cast<int>(state.feasible.size()) || !state.feasible[p]) {
    throw InfeasibleState("physical qubit " + std::to_string(p) + " is not available");
  }
  state.layout.assign[state.current] = p;
  state.feasible[p] = false;
  ++state.current;
}

ProgramGraph gen_random_instance(int n, double edge_prob, Rng& rng, int feature_width) {
  if (n < 1) throw InvalidArgument("random instance needs n >= 1");
  if (edge_prob < 0 || edge_prob > 1) throw InvalidArgument("edge_prob must lie in [0, 1]");
  ProgramGraph pg;
  pg.num_logical = n;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (uniform_unit(rng) >= edge_prob) continue;
      if (uniform_index(rng, 2) == 0) {
        pg.edges.push_back({i, j});
      } else {
        pg.edges.push_back({j, i});
      }
    }
  }
  pg.node_features = one_hot_features(n, std::max(n, feature_width));
  return pg;
}

void attach_engineered_features(ProgramGraph& pg) {
  if (pg.edges.empty()) {
    pg.node_features = MatrixXd::Zero(pg.num_logical, kFeatureDim);
    return;
  }
  pg.node_features = feature_matrix(extract_features(circuit_from_graph(pg)));
}

// ---------------------------------------------------------------------------
// Strategies
// ---------------------------------------------------------------------------

DecodeKind parse_decode_kind(const std::string& s) {
  if (s == "greedy") return DecodeKind::kGreedy;
  if (s == "sampling" || s == "sample") return DecodeKind::kSampling;
  if (s == "msg" || s == "multistart_greedy") return DecodeKind::kMultistartGreedy;
  if (s == "mss" || s == "multistart_sampling") return DecodeKind::kMultistartSampling;
  throw InvalidArgument("unknown decode strategy '" + s + "' (expected greedy, sampling, msg, mss)");
}

std::string to_string(DecodeKind k) {
  switch (k) {
    case DecodeKind::kGreedy: return "greedy";
    case DecodeKind::kSampling: return "sampling";
    case DecodeKind::kMultistartGreedy: return "multistart_greedy";
    case DecodeKind::kMultistartSampling: return "multistart_sampling";
  }
  return "?";
}

std::string short_name(DecodeKind k) {
  switch (k) {
    case DecodeKind::kMultistartGreedy: return "msg";
    case DecodeKind::kMultistartSampling: return "mss";
    default: return to_string(k);
  }
}

namespace {
bool is_multistart(DecodeKind k) {
  return k == DecodeKind::kMultistartGreedy || k == DecodeKind::kMultistartSampling;
}
}  // namespace

DecodeStrategy DecodeStrategy::make(DecodeKind kind, std::uint64_t seed, int starts) {
  return {kind, is_multistart(kind) ? starts : 1, seed};
}

void DecodeStrategy::validate() const {
  if (is_multistart(kind)) {
    if (k < 1) throw ConfigError("multistart decoding needs k >= 1");
  } else if (k != 1) {
    throw ConfigError(to_string(kind) + " decoding uses exactly one start");
  }
}

// ---------------------------------------------------------------------------
// Batched rollouts
// ---------------------------------------------------------------------------

namespace {

int argmax_feasible(const Eigen::RowVectorXd& logp) {
  int best = -1;
  for (Eigen::Index p = 0; p < logp.size(); ++p) {
    if (!std::isfinite(logp[p])) continue;
    if (best < 0 || logp[p] > logp[best]) best = static_cast<int>(p);
  }
  return best;
}

int sample_feasible(const Eigen::RowVectorXd& logp, Rng& rng) {
  const double u = uniform_unit(rng);
  double cum = 0.0;
  int last = -1;
  for (Eigen::Index p = 0; p < logp.size(); ++p) {
    if (!std::isfinite(logp[p])) continue;
    cum += std::exp(logp[p]);
    last = static_cast<int>(p);
    if (u < cum) return last;
  }
  return last;
}

}  // namespace

RolloutBatch run_rollouts(PolicyForward& fw, const CouplingGraph& cg, const CostModel& cm,
                          std::span<const ProgramGraph* const> instances,
                          std::span<const RolloutRequest> requests, std::span<Rng> rngs) {
  const int N = cg.num_physical();
  const int rows = static_cast<int>(requests.size());
  if (fw.config().num_physical != N) {
    throw ShapeError("policy was built for " + std::to_string(fw.config().num_physical) +
                     " physical qubits, device has " + std::to_string(N));
  }
  if (static_cast<int>(rngs.size()) != rows) throw InvalidArgument("need one RNG per rollout row");
  for (const ProgramGraph* g : instances) {
    if (g->num_logical > N) {
      throw InvalidArgument("program has " + std::to_string(g->num_logical) +
                            " qubits, device only " + std::to_string(N));
    }
  }

  RolloutBatch out;
  if (rows == 0) {
    out.log_probs = fw.constant(MatrixXd::Zero(0, 1));
    return out;
  }

  const GraphBatch pb = stack_program_graphs(fw.policy(), instances);
  const ad::Var program = encode_batch(fw, pb, GraphRole::kProgram);
  const ad::Var physical = encode_batch(fw, coupling_batch(cg), GraphRole::kPhysical);
  const DecoderCache cache = prepare_decoder(fw, physical);

  std::vector<int> size(rows), offset(rows);
  int max_n = 0;
  for (int r = 0; r < rows; ++r) {
    const RolloutRequest& req = requests[r];
    if (req.instance < 0 || req.instance >= static_cast<int>(instances.size())) {
      throw InvalidArgument("rollout row " + std::to_string(r) + " names a missing instance");
    }
    size[r] = pb.sizes[req.instance];
    offset[r] = pb.offsets[req.instance];
    if (req.rule == StepRule::kForced && static_cast<int>(req.forced.size()) != size[r]) {
      throw InvalidArgument("forced rollout needs one action per logical qubit");
    }
    max_n = std::max(max_n, size[r]);
  }

  std::vector<std::vector<PhysicalQubit>> assign(rows);
  std::vector<std::vector<bool>> taken(rows, std::vector<bool>(N, false));
  out.log_prob_values.assign(rows, 0.0);
  ad::Var total = fw.constant(MatrixXd::Zero(rows, 1));

  for (int t = 0; t < max_n; ++t) {
    std::vector<int> active, current, previous;
    std::vector<std::vector<int>> stacked;
    for (int r = 0; r < rows; ++r) {
      if (t >= size[r]) continue;
      active.push_back(r);
      current.push_back(offset[r] + t);
      previous.push_back(t == 0 ? -1 : offset[r] + t - 1);
      std::vector<int> stack(t + 1);
      std::iota(stack.begin(), stack.end(), offset[r]);
      stacked.push_back(std::move(stack));
    }
    const int a = static_cast<int>(active.size());
    ad::Mask mask(a, N);
    for (int i = 0; i < a; ++i) {
      for (int p = 0; p < N; ++p) mask(i, p) = taken[active[i]][p];
    }
    const ad::Var ctx = context_batch(fw, program, current, previous, stacked);
    const ad::Var logp = masked_log_probs(pointer_logits_batch(fw, cache, ctx, &mask), mask);

    std::vector<int> picks(a), local(a);
    for (int i = 0; i < a; ++i) {
      const int r = active[i];
      const RolloutRequest& req = requests[r];
      const Eigen::RowVectorXd lp = logp.value().row(i);
      int choice = -1;
      switch (req.rule) {
        case StepRule::kGreedy: choice = argmax_feasible(lp); break;
        case StepRule::kSample: choice = sample_feasible(lp, rngs[r]); break;
        case StepRule::kSampleFirst:
          choice = t == 0 ? sample_feasible(lp, rngs[r]) : argmax_feasible(lp);
          break;
        case StepRule::kForced:
          choice = req.forced[t];
          if (choice < 0 || choice >= N || taken[r][choice]) {
            throw InfeasibleState("forced action " + std::to_string(choice) + " at step " +
                                  std::to_string(t) + " is not available");
          }
          break;
      }
      if (choice < 0) throw InfeasibleState("no feasible action at step " + std::to_string(t));
      picks[i] = choice;
      local[i] = i;
      assign[r].push_back(choice);
      taken[r][choice] = true;
      out.log_prob_values[r] += lp[choice];
    }
    total = ad::add(total, ad::scatter_add_rows(ad::pick(logp, local, picks), active, rows));
  }

  out.log_probs = total;
  for (int r = 0; r < rows; ++r) {
    Layout layout(N, assign[r]);
    out.costs.push_back(swap_cost(layout, *instances[requests[r].instance], cm));
    out.layouts.push_back(std::move(layout));
  }
  return out;
}

RolloutResult rollout(const ProgramGraph& pg, const CouplingGraph& cg, const PolicyParams& policy,
                      StepRule rule, Rng& rng, CostMode mode) {
  ad::Tape tape;
  PolicyForward fw(tape, policy, PolicyMode::kEval, false);
  const ProgramGraph* instances[] = {&pg};
  const RolloutRequest requests[] = {{0, rule, {}}};
  const RolloutBatch b =
      run_rollouts(fw, cg, CostModel(mode, cg), instances, requests, std::span<Rng>(&rng, 1));
  return {b.layouts[0], b.log_prob_values[0], -b.costs[0]};
}

DecodeResult decode(const ProgramGraph& pg, const CouplingGraph& cg, const PolicyParams& policy,
                    const DecodeStrategy& strategy, CostMode mode) {
  strategy.validate();
  std::vector<RolloutRequest> requests(strategy.k);
  for (int r = 0; r < strategy.k; ++r) {
    requests[r].instance = 0;
    switch (strategy.kind) {
      case DecodeKind::kGreedy: requests[r].rule = StepRule::kGreedy; break;
      case DecodeKind::kSampling:
      case DecodeKind::kMultistartSampling: requests[r].rule = StepRule::kSample; break;
      case DecodeKind::kMultistartGreedy:
        requests[r].rule = r == 0 ? StepRule::kGreedy : StepRule::kSampleFirst;
        break;
    }
  }
  std::vector<Rng> rngs;
  for (int r = 0; r < strategy.k; ++r) rngs.push_back(make_rng(strategy.seed, r));

  ad::Tape tape;
  PolicyForward fw(tape, policy, PolicyMode::kEval, false);
  const ProgramGraph* instances[] = {&pg};
  const RolloutBatch b = run_rollouts(fw, cg, CostModel(mode, cg), instances, requests, rngs);

  DecodeResult result;
  result.start_costs = b.costs;
  int best = 0;
  for (int r = 1; r < strategy.k; ++r) {
    if (b.costs[r] < b.costs[best]) best = r;
  }
  result.layout = b.layouts[best];
  result.cost = b.costs[best];
  return result;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (batches_per_epoch < 1) throw ConfigError("batches_per_epoch must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (!sampler) {
    if (!(edge_prob > 0 && edge_prob < 1)) throw ConfigError("edge_prob must lie in (0, 1)");
    if (n_min < 1 || n_max < n_min) throw ConfigError("need 1 <= n_min <= n_max");
  }
  if (validation_size < 1) throw ConfigError("validation_size must be >= 1");
  if (bn_momentum < 0 || bn_momentum > 1) throw ConfigError("bn_momentum must lie in [0, 1]");
  if (max_grad_norm < 0) throw ConfigError("max_grad_norm must be >= 0");
}

void write_metrics_csv(std::ostream& out, const std::vector<EpochMetrics>& metrics) {
  out << "epoch,mean_reward,baseline,grad_norm,wallclock_s\n";
  out << std::setprecision(12);
  for (const EpochMetrics& m : metrics) {
    out << m.epoch << ',' << m.mean_reward << ',' << m.baseline << ',' << m.grad_norm << ','
        << std::setprecision(4) << m.wallclock_s << std::setprecision(12) << '\n';
  }
}

void save_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& metrics) {
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  write_metrics_csv(out, metrics);
}

ProgramGraph sample_instance(const TrainConfig& cfg, const PolicyConfig& pcfg, Rng& rng) {
  ProgramGraph pg;
  if (cfg.sampler) {
    pg = cfg.sampler(rng);
  } else {
    const int n = cfg.n_min + static_cast<int>(uniform_index(rng, cfg.n_max - cfg.n_min + 1));
    pg = gen_random_instance(n, cfg.edge_prob, rng, pcfg.n_max);
  }
  if (pcfg.features == FeatureKind::kEngineered && pg.node_features.cols() != kFeatureDim) {
    attach_engineered_features(pg);
  }
  return pg;
}

std::vector<ProgramGraph> validation_set(const TrainConfig& cfg, const PolicyConfig& pcfg) {
  Rng rng = make_rng(cfg.seed, 2);
  std::vector<ProgramGraph> set;
  set.reserve(cfg.validation_size);
  for (int i = 0; i < cfg.validation_size; ++i) set.push_back(sample_instance(cfg, pcfg, rng));
  return set;
}

double mean_greedy_reward(const PolicyParams& policy, const CouplingGraph& cg,
                          std::span<const ProgramGraph> instances, CostMode mode) {
  if (instances.empty()) return 0.0;
  std::vector<const ProgramGraph*> ptrs;
  std::vector<RolloutRequest> requests;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    ptrs.push_back(&instances[i]);
    requests.push_back({static_cast<int>(i), StepRule::kGreedy, {}});
  }
  std::vector<Rng> rngs(instances.size());
  ad::Tape tape;
  PolicyForward fw(tape, policy, PolicyMode::kEval, false);
  const RolloutBatch b = run_rollouts(fw, cg, CostModel(mode, cg), ptrs, requests, rngs);
  double total = 0.0;
  for (double c : b.costs) total -= c;
  return total / static_cast<double>(instances.size());
}

StepReport reinforce_step(PolicyParams& policy, ad::AdamState<double>& adam, const CouplingGraph& cg,
                          std::span<const ProgramGraph> batch, double baseline, const TrainConfig& cfg,
                          std::span<Rng> rngs) {
  StepReport report;
  const int rows = static_cast<int>(batch.size());
  if (rows == 0) return report;
  std::vector<const ProgramGraph*> ptrs;
  std::vector<RolloutRequest> requests;
  for (int b = 0; b < rows; ++b) {
    ptrs.push_back(&batch[b]);
    requests.push_back({b, StepRule::kSample, {}});
  }

  ad::Tape tape;
  PolicyForward fw(tape, policy, PolicyMode::kTrain, true);
  const RolloutBatch rb = run_rollouts(fw, cg, CostModel(cfg.cost_mode, cg), ptrs, requests, rngs);

  Eigen::VectorXd advantage(rows);
  for (int b = 0; b < rows; ++b) {
    advantage[b] = -rb.costs[b] - baseline;
    report.mean_reward -= rb.costs[b];
  }
  report.mean_reward /= rows;
  if (cfg.whiten_advantage && rows > 1) {
    const double mu = advantage.mean();
    const double sd = std::sqrt((advantage.array() - mu).square().sum() / (rows - 1));
    advantage = (advantage.array() - mu) / (sd + 1e-8);
  }
  const MatrixXd weights = (-advantage / rows).transpose();
  const ad::Var loss = ad::matmul(fw.constant(weights), rb.log_probs);
  report.loss = loss.item();
  if (!std::isfinite(report.loss)) {
    throw NumericError("non-finite REINFORCE loss " + std::to_string(report.loss) + " (mean reward " +
                       std::to_string(report.mean_reward) + ", baseline " + std::to_string(baseline) +
                       ")");
  }
  tape.backward(loss);
  std::vector<MatrixXd> grads = fw.gradients();
  double sq = 0.0;
  for (const MatrixXd& g : grads) sq += g.squaredNorm();
  report.grad_norm = std::sqrt(sq);
  if (cfg.max_grad_norm > 0 && report.grad_norm > cfg.max_grad_norm) {
    const double s = cfg.max_grad_norm / report.grad_norm;
    for (MatrixXd& g : grads) g *= s;
  }
  try {
    ad::AdamOptions opt;
    opt.lr = cfg.lr;
    ad::adam_step<double>(policy.store.values(), std::span<const MatrixXd>(grads), adam, opt);
  } catch (const NumericError& ex) {
    std::cerr << "qlayout: skipping batch: " << ex.what() << '\n';
    report.skipped = true;
    return report;
  }
  update_running_stats(policy, fw.observed_stats(), cfg.bn_momentum);
  return report;
}

TrainResult train(const TrainConfig& cfg, const PolicyConfig& pcfg, const CouplingGraph& cg,
                  const EpochCallback& on_epoch, const PolicyParams* initial) {
  cfg.validate();
  PolicyConfig config = pcfg;
  config.num_physical = cg.num_physical();
  config.device_name = cg.name();
  config.device_hash = cg.topology_hash();
  if (!cfg.sampler && config.features == FeatureKind::kOneHot && cfg.n_max > config.n_max) {
    throw ConfigError("training n_max " + std::to_string(cfg.n_max) + " exceeds the policy's one-hot width " +
                      std::to_string(config.n_max));
  }
  if (!cfg.sampler && cfg.n_max > cg.num_physical()) {
    throw ConfigError("training n_max exceeds the device size");
  }

  TrainResult result{initial != nullptr ? *initial : init_policy(config, cfg.seed), {}};
  if (initial != nullptr && (initial->config.num_physical != config.num_physical ||
                             initial->config.device_hash != config.device_hash)) {
    throw ConfigError("initial policy was trained for a different device");
  }
  PolicyParams& policy = result.policy;
  const std::vector<ProgramGraph> validation = validation_set(cfg, policy.config);
  ad::AdamState<double> adam;
  Rng data_rng = make_rng(cfg.seed, 1);
  const std::uint64_t rollout_family = mix_seed(cfg.seed ^ 0x726f6c6cULL);
  std::uint64_t rollout_stream = 0;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    m.baseline = mean_greedy_reward(policy, cg, validation, cfg.cost_mode);
    int applied = 0;
    for (int bi = 0; bi < cfg.batches_per_epoch; ++bi) {
      std::vector<ProgramGraph> batch;
      std::vector<Rng> rngs;
      batch.reserve(cfg.batch_size);
      for (int b = 0; b < cfg.batch_size; ++b) {
        batch.push_back(sample_instance(cfg, policy.config, data_rng));
        rngs.push_back(make_rng(rollout_family, rollout_stream++));
      }
      const StepReport step = reinforce_step(policy, adam, cg, batch, m.baseline, cfg, rngs);
      m.mean_reward += step.mean_reward;
      if (step.skipped) {
        ++m.skipped_batches;
      } else {
        m.grad_norm += step.grad_norm;
        ++applied;
      }
    }
    m.mean_reward /= cfg.batches_per_epoch;
    if (applied > 0) m.grad_norm /= applied;
    m.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

}  // namespace qlayout
