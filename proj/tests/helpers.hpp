// Small fixtures shared by the unit tests and the acceptance runner.
#pragma once

#include <string>
#include <vector>

#include "oracles.hpp"
#include "qlayout/policy.hpp"
#include "qlayout/training.hpp"

namespace fixture {

inline qlayout::PolicyConfig small_config(const qlayout::CouplingGraph& cg, int n_max,
                                          qlayout::NormKind norm = qlayout::NormKind::kLayer,
                                          qlayout::ContextKind ctx = qlayout::ContextKind::kConcatProject,
                                          int d = 8) {
  qlayout::PolicyConfig cfg;
  cfg.encoder.layers = 2;
  cfg.encoder.heads = 2;
  cfg.encoder.embed_dim = d;
  cfg.encoder.norm = norm;
  cfg.decoder.heads = 2;
  cfg.decoder.context = ctx;
  cfg.decoder.context_dim = d;
  cfg.n_max = n_max;
  cfg.num_physical = cg.num_physical();
  cfg.device_name = cg.name();
  cfg.device_hash = cg.topology_hash();
  return cfg;
}

// Sum of log pi along a forced trajectory, with or without gradients.
inline double forced_log_prob(const qlayout::PolicyParams& policy, const qlayout::ProgramGraph& pg,
                              const qlayout::CouplingGraph& cg, const std::vector<int>& actions,
                              qlayout::PolicyMode mode, std::vector<Eigen::MatrixXd>* grads = nullptr) {
  using namespace qlayout;
  ad::Tape tape;
  PolicyForward fw(tape, policy, mode, grads != nullptr);
  const CostModel cm(CostMode::kAdjacentFree, cg);
  const ProgramGraph* instances[] = {&pg};
  RolloutRequest req;
  req.rule = StepRule::kForced;
  req.forced = actions;
  std::vector<Rng> rngs{make_rng(0)};
  const RolloutBatch out = run_rollouts(fw, cg, cm, instances, std::span<const RolloutRequest>(&req, 1), rngs);
  if (grads != nullptr) {
    tape.backward(ad::sum(out.log_probs));
    *grads = fw.gradients();
  }
  return out.log_prob_values[0];
}

// Worst relative error between analytic and five-point finite-difference
// gradients of log pi over every parameter entry.
inline double log_prob_gradient_error(qlayout::PolicyParams policy, const qlayout::ProgramGraph& pg,
                                      const qlayout::CouplingGraph& cg, const std::vector<int>& actions,
                                      qlayout::PolicyMode mode) {
  std::vector<Eigen::MatrixXd> grads;
  forced_log_prob(policy, pg, cg, actions, mode, &grads);
  double worst = 0.0;
  for (std::size_t k = 0; k < policy.store.size(); ++k) {
    auto f = [&](const Eigen::MatrixXd& x) {
      const Eigen::MatrixXd keep = policy.store.values()[k];
      policy.store.values()[k] = x;
      const double v = forced_log_prob(policy, pg, cg, actions, mode);
      policy.store.values()[k] = keep;
      return v;
    };
    const Eigen::MatrixXd numeric = oracle::numeric_gradient5(f, policy.store.values()[k]);
    worst = std::max(worst, oracle::max_relative_error(grads[k], numeric));
  }
  return worst;
}

}  // namespace fixture
