// qlayout command-line front end.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "qlayout/bench.hpp"
#include "qlayout/circuit.hpp"
#include "qlayout/error.hpp"
#include "qlayout/io.hpp"
#include "qlayout/objective.hpp"
#include "qlayout/policy.hpp"
#include "qlayout/postprocess.hpp"
#include "qlayout/topology.hpp"
#include "qlayout/training.hpp"

namespace {

using namespace qlayout;

struct ModelOptions {
  int layers = 4;
  int heads = 8;
  int embed_dim = 128;
  std::string norm = "batch";
  bool shared = false;
  int decoder_heads = 16;
  std::string context = "concat_project";
  int context_dim = 128;
  std::string stack_pool = "mean";
  double clip = 10.0;
  std::string features = "onehot";
};

struct TrainOptions {
  std::string device = "grid8x8";
  int n_min = 6;
  int n_max = 12;
  int epochs = 50;
  int batches = 20;
  int batch_size = 64;
  double lr = 3e-4;
  double edge_prob = 0.3;
  std::uint64_t seed = 1;
  std::string cost_mode = "adjacent-free";
  int validation_size = 256;
  bool whiten = false;
  double max_grad_norm = 0.0;
  ModelOptions model;
};

void add_model_options(CLI::App* app, ModelOptions& m) {
  app->add_option("--layers", m.layers, "GAT layers")->capture_default_str();
  app->add_option("--heads", m.heads, "GAT heads per layer")->capture_default_str();
  app->add_option("--embed-dim", m.embed_dim, "embedding width d_e")->capture_default_str();
  app->add_option("--norm", m.norm, "layer | batch | graph")->capture_default_str();
  app->add_flag("--shared-encoder", m.shared, "share GAT weights between both encoders");
  app->add_option("--decoder-heads", m.decoder_heads, "glimpse heads")->capture_default_str();
  app->add_option("--context", m.context, "project_concat | concat_project | stack_project")
      ->capture_default_str();
  app->add_option("--context-dim", m.context_dim, "context width d_c")->capture_default_str();
  app->add_option("--stack-pool", m.stack_pool, "mean | sum | last")->capture_default_str();
  app->add_option("--clip", m.clip, "pointer logit clip C")->capture_default_str();
  app->add_option("--features", m.features, "onehot | engineered")->capture_default_str();
}

void add_train_options(CLI::App* app, TrainOptions& t) {
  app->add_option("--device", t.device, "gridRxC, lineN, heavyhex or a JSON file")->capture_default_str();
  app->add_option("--n-min", t.n_min, "smallest training program")->capture_default_str();
  app->add_option("--n-max", t.n_max, "largest training program")->capture_default_str();
  app->add_option("--epochs", t.epochs)->capture_default_str();
  app->add_option("--batches", t.batches, "batches per epoch")->capture_default_str();
  app->add_option("--batch-size", t.batch_size)->capture_default_str();
  app->add_option("--lr", t.lr)->capture_default_str();
  app->add_option("--edge-prob", t.edge_prob)->capture_default_str();
  app->add_option("--seed", t.seed)->capture_default_str();
  app->add_option("--cost-mode", t.cost_mode, "literal | adjacent-free")->capture_default_str();
  app->add_option("--validation-size", t.validation_size, "baseline instances")->capture_default_str();
  app->add_flag("--whiten", t.whiten, "standardize advantages per batch");
  app->add_option("--max-grad-norm", t.max_grad_norm, "clip gradient norm (0 = off)")->capture_default_str();
  add_model_options(app, t.model);
}

PolicyConfig policy_config(const ModelOptions& m, int n_max) {
  PolicyConfig c;
  c.encoder.layers = m.layers;
  c.encoder.heads = m.heads;
  c.encoder.embed_dim = m.embed_dim;
  c.encoder.norm = parse_norm_kind(m.norm);
  c.encoder.shared = m.shared;
  c.decoder.heads = m.decoder_heads;
  c.decoder.context = parse_context_kind(m.context);
  c.decoder.context_dim = m.context_dim;
  c.decoder.stack_pool = parse_stack_pool(m.stack_pool);
  c.decoder.clip = m.clip;
  c.features = parse_feature_kind(m.features);
  c.n_max = n_max;
  return c;
}

TrainConfig train_config(const TrainOptions& t) {
  TrainConfig c;
  c.batch_size = t.batch_size;
  c.lr = t.lr;
  c.epochs = t.epochs;
  c.batches_per_epoch = t.batches;
  c.n_min = t.n_min;
  c.n_max = t.n_max;
  c.edge_prob = t.edge_prob;
  c.seed = t.seed;
  c.cost_mode = parse_cost_mode(t.cost_mode);
  c.validation_size = t.validation_size;
  c.whiten_advantage = t.whiten;
  c.max_grad_norm = t.max_grad_norm;
  return c;
}

ProgramGraph circuit_graph(const std::string& path, const PolicyConfig* pcfg) {
  const Circuit c = load_qasm(path);
  if (pcfg != nullptr) return prepare_program_graph(c, *pcfg);
  return build_program_graph(c);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
  } else {
    write_text_file(path, text);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qlayout: qubit layout by learned pointer policy and local search"};
  app.require_subcommand(1);

  // train
  TrainOptions train_opt;
  std::string train_out = "ckpt.json", train_metrics;
  auto* train_cmd = app.add_subcommand("train", "train a policy with REINFORCE");
  add_train_options(train_cmd, train_opt);
  train_cmd->add_option("--out", train_out, "checkpoint path")->capture_default_str();
  train_cmd->add_option("--metrics", train_metrics, "per-epoch metrics CSV");

  // map
  std::string map_ckpt, map_circuit, map_device, map_strategy = "greedy", map_out, map_mode = "adjacent-free";
  int map_k = 10;
  std::uint64_t map_seed = 0;
  auto* map_cmd = app.add_subcommand("map", "decode a layout for a circuit");
  map_cmd->add_option("--ckpt", map_ckpt)->required();
  map_cmd->add_option("--circuit", map_circuit)->required();
  map_cmd->add_option("--device", map_device)->required();
  map_cmd->add_option("--strategy", map_strategy, "greedy | sampling | msg | mss")->capture_default_str();
  map_cmd->add_option("--k", map_k, "multistart starts")->capture_default_str();
  map_cmd->add_option("--seed", map_seed)->capture_default_str();
  map_cmd->add_option("--cost-mode", map_mode)->capture_default_str();
  map_cmd->add_option("--out", map_out, "layout JSON (default stdout)");

  // postprocess
  std::string pp_layout, pp_circuit, pp_device, pp_op = "random_assignment", pp_out, pp_mode = "adjacent-free";
  SearchConfig pp_cfg;
  auto* pp_cmd = app.add_subcommand("postprocess", "refine a layout by local search");
  pp_cmd->add_option("--layout", pp_layout)->required();
  pp_cmd->add_option("--circuit", pp_circuit)->required();
  pp_cmd->add_option("--device", pp_device)->required();
  pp_cmd->add_option("--op", pp_op, "random_swap | random_assignment")->capture_default_str();
  pp_cmd->add_option("--iters", pp_cfg.n_iters)->capture_default_str();
  pp_cmd->add_option("--patience", pp_cfg.patience)->capture_default_str();
  pp_cmd->add_option("--seed", pp_cfg.seed)->capture_default_str();
  pp_cmd->add_option("--restarts", pp_cfg.restarts, "independent searches, best kept")->capture_default_str();
  pp_cmd->add_option("--cost-mode", pp_mode)->capture_default_str();
  pp_cmd->add_flag("--reset-patience", pp_cfg.reset_patience, "zero the patience counter on improvement");
  pp_cmd->add_option("--out", pp_out, "layout JSON (default stdout)");

  // features
  std::string feat_circuit, feat_out;
  int feat_radius = kDefaultWalkRadius;
  auto* feat_cmd = app.add_subcommand("features", "engineered per-qubit features as CSV");
  feat_cmd->add_option("--circuit", feat_circuit)->required();
  feat_cmd->add_option("--radius", feat_radius, "influence walk radius")->capture_default_str();
  feat_cmd->add_option("--out", feat_out);

  // bench
  std::string bench_dataset, bench_device, bench_ckpt, bench_strategies = "greedy", bench_seeds = "1",
                                                        bench_out = "report.csv", bench_summary,
                                                        bench_baseline, bench_mode = "adjacent-free",
                                                        bench_op = "random_assignment";
  BenchRun bench_run;
  bool bench_no_timing = false;
  auto* bench_cmd = app.add_subcommand("bench", "evaluate a checkpoint on a directory of circuits");
  bench_cmd->add_option("--dataset", bench_dataset)->required();
  bench_cmd->add_option("--device", bench_device)->required();
  bench_cmd->add_option("--ckpt", bench_ckpt)->required();
  bench_cmd->add_option("--strategies", bench_strategies, "comma list of greedy,sampling,msg,mss")
      ->capture_default_str();
  bench_cmd->add_flag("--pp", bench_run.postprocess, "post-process with local search");
  bench_cmd->add_option("--seeds", bench_seeds, "comma list")->capture_default_str();
  bench_cmd->add_option("--k", bench_run.multistart_k, "multistart starts")->capture_default_str();
  bench_cmd->add_option("--cost-mode", bench_mode)->capture_default_str();
  bench_cmd->add_option("--op", bench_op)->capture_default_str();
  bench_cmd->add_option("--iters", bench_run.search.n_iters)->capture_default_str();
  bench_cmd->add_option("--patience", bench_run.search.patience)->capture_default_str();
  bench_cmd->add_option("--restarts", bench_run.search.restarts, "independent searches, best kept")
      ->capture_default_str();
  bench_cmd->add_flag("--reset-patience", bench_run.search.reset_patience, "zero the patience counter on improvement");
  bench_cmd->add_option("--baseline", bench_baseline, "CSV of instance,cost");
  bench_cmd->add_option("--out", bench_out)->capture_default_str();
  bench_cmd->add_option("--summary", bench_summary, "summary JSON (default <out>.summary.json)");
  bench_cmd->add_flag("--no-timing", bench_no_timing, "omit wall-time columns");

  // cost
  std::string cost_layout, cost_circuit, cost_device, cost_mode = "adjacent-free";
  bool cost_optimal = false;
  auto* cost_cmd = app.add_subcommand("cost", "SWAP cost of a layout, or the exact optimum");
  cost_cmd->add_option("--layout", cost_layout);
  cost_cmd->add_option("--circuit", cost_circuit)->required();
  cost_cmd->add_option("--device", cost_device)->required();
  cost_cmd->add_option("--cost-mode", cost_mode)->capture_default_str();
  cost_cmd->add_flag("--optimal", cost_optimal, "brute-force the minimum (small instances)");

  // gen-synthetic
  std::string syn_device = "grid4x4", syn_out;
  int syn_count = 50, syn_n_min = 6, syn_n_max = 12;
  double syn_keep = 0.7;
  std::uint64_t syn_seed = 1;
  auto* syn_cmd = app.add_subcommand("gen-synthetic", "write circuits with a zero-cost layout");
  syn_cmd->add_option("--device", syn_device)->capture_default_str();
  syn_cmd->add_option("--count", syn_count)->capture_default_str();
  syn_cmd->add_option("--n-min", syn_n_min)->capture_default_str();
  syn_cmd->add_option("--n-max", syn_n_max)->capture_default_str();
  syn_cmd->add_option("--edge-keep", syn_keep, "probability of keeping each induced edge")
      ->capture_default_str();
  syn_cmd->add_option("--seed", syn_seed)->capture_default_str();
  syn_cmd->add_option("--out", syn_out, "output directory")->required();

  // ablation
  TrainOptions abl_opt;
  int abl_eval = 50, abl_k = 10;
  std::string abl_out;
  auto* abl_cmd = app.add_subcommand("ablation", "train every context kind and tabulate decoding costs");
  add_train_options(abl_cmd, abl_opt);
  abl_cmd->add_option("--eval-count", abl_eval, "held-out instances")->capture_default_str();
  abl_cmd->add_option("--k", abl_k, "multistart starts")->capture_default_str();
  abl_cmd->add_option("--out", abl_out, "CSV (default stdout)");

  // device
  std::string dev_spec, dev_out;
  auto* dev_cmd = app.add_subcommand("device", "print a device as JSON");
  dev_cmd->add_option("spec", dev_spec)->required();
  dev_cmd->add_option("--out", dev_out);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      const CouplingGraph cg = parse_device(train_opt.device);
      const TrainConfig tcfg = train_config(train_opt);
      const PolicyConfig pcfg = policy_config(train_opt.model, train_opt.n_max);
      const TrainResult r = train(tcfg, pcfg, cg, [](const EpochMetrics& m) {
        std::fprintf(stderr, "epoch %3d  reward %9.4f  baseline %9.4f  |g| %8.4f  %7.1fs\n", m.epoch,
                     m.mean_reward, m.baseline, m.grad_norm, m.wallclock_s);
      });
      save_checkpoint(r.policy, train_out);
      if (!train_metrics.empty()) save_metrics_csv(train_metrics, r.metrics);
    } else if (*map_cmd) {
      const CouplingGraph cg = parse_device(map_device);
      const PolicyParams policy = load_checkpoint(map_ckpt);
      check_device(policy, cg);
      const ProgramGraph pg = circuit_graph(map_circuit, &policy.config);
      const CostMode mode = parse_cost_mode(map_mode);
      const DecodeResult d =
          decode(pg, cg, policy, DecodeStrategy::make(parse_decode_kind(map_strategy), map_seed, map_k), mode);
      emit(map_out, layout_to_json(d.layout) + "\n");
      std::fprintf(stderr, "cost %s (%s)\n", format_number(d.cost).c_str(), to_string(mode).c_str());
    } else if (*pp_cmd) {
      const CouplingGraph cg = parse_device(pp_device);
      const ProgramGraph pg = circuit_graph(pp_circuit, nullptr);
      pp_cfg.neighborhood = parse_neighborhood(pp_op);
      pp_cfg.cost_mode = parse_cost_mode(pp_mode);
      const SearchResult s = local_search(load_layout(pp_layout), pg, cg, pp_cfg);
      emit(pp_out, layout_to_json(s.layout) + "\n");
      std::fprintf(stderr, "cost %s -> %s after %d iterations\n", format_number(s.initial_cost).c_str(),
                   format_number(s.cost).c_str(), s.iterations);
    } else if (*feat_cmd) {
      const Circuit c = load_qasm(feat_circuit);
      std::ostringstream out;
      out << "qubit,mu_s,mu_c,mu_t,influence,pagerank,causal_cone\n";
      out.precision(10);
      const auto rows = extract_features(c, feat_radius);
      for (std::size_t q = 0; q < rows.size(); ++q) {
        out << q;
        for (double v : rows[q]) out << ',' << v;
        out << '\n';
      }
      emit(feat_out, out.str());
    } else if (*bench_cmd) {
      const CouplingGraph cg = parse_device(bench_device);
      const PolicyParams policy = load_checkpoint(bench_ckpt);
      check_device(policy, cg);
      bench_run.strategies.clear();
      for (const std::string& s : split_list(bench_strategies)) bench_run.strategies.push_back(parse_decode_kind(s));
      bench_run.seeds.clear();
      for (const std::string& s : split_list(bench_seeds)) bench_run.seeds.push_back(std::stoull(s));
      bench_run.cost_mode = parse_cost_mode(bench_mode);
      bench_run.search.neighborhood = parse_neighborhood(bench_op);
      const Dataset data = load_dataset(bench_dataset, policy.config);
      for (const std::string& s : data.skipped) std::fprintf(stderr, "warning: skipped %s\n", s.c_str());
      BaselineMap baseline;
      if (!bench_baseline.empty()) baseline = import_baseline(bench_baseline);
      const BenchReport report =
          run_bench(bench_run, policy, cg, data, bench_baseline.empty() ? nullptr : &baseline);
      for (const std::string& w : report.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      std::ostringstream csv;
      write_report_csv(csv, report, !bench_no_timing);
      emit(bench_out, csv.str());
      const std::string summary_path =
          !bench_summary.empty() ? bench_summary : (bench_out == "-" ? "" : bench_out + ".summary.json");
      if (!summary_path.empty()) write_text_file(summary_path, summary_json(report, bench_run) + "\n");
    } else if (*cost_cmd) {
      const CouplingGraph cg = parse_device(cost_device);
      const ProgramGraph pg = circuit_graph(cost_circuit, nullptr);
      const CostModel cm(parse_cost_mode(cost_mode), cg);
      if (cost_optimal) {
        const OptimalLayout best = brute_force_optimal(pg, cg, cm);
        std::cout << layout_to_json(best.layout) << "\n";
        std::fprintf(stderr, "optimal cost %s\n", format_number(best.cost).c_str());
      } else {
        if (cost_layout.empty()) throw InvalidArgument("--layout is required unless --optimal is given");
        std::cout << format_number(swap_cost(load_layout(cost_layout), pg, cm)) << "\n";
      }
    } else if (*syn_cmd) {
      write_synthetic_dataset(syn_out, parse_device(syn_device), syn_count, syn_n_min, syn_n_max, syn_keep,
                              syn_seed);
    } else if (*abl_cmd) {
      const CouplingGraph cg = parse_device(abl_opt.device);
      const TrainConfig tcfg = train_config(abl_opt);
      const PolicyConfig pcfg = policy_config(abl_opt.model, abl_opt.n_max);
      Rng rng = make_rng(abl_opt.seed, 0xab1a7e);
      std::vector<ProgramGraph> eval;
      for (int i = 0; i < abl_eval; ++i) eval.push_back(sample_instance(tcfg, pcfg, rng));
      std::ostringstream csv;
      write_ablation_csv(csv, run_context_ablation(tcfg, pcfg, cg, eval, abl_k, abl_opt.seed));
      emit(abl_out, csv.str());
    } else if (*dev_cmd) {
      emit(dev_out, coupling_graph_to_json(parse_device(dev_spec)) + "\n");
    }
  } catch (const qlayout::Error& ex) {
    std::fprintf(stderr, "qlayout: error: %s\n", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "qlayout: error: %s\n", ex.what());
    return 2;
  }
  return 0;
}
