#include "qlayout/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <ostream>
#include <set>
#include <tuple>

#include <json.hpp>

#include "qlayout/error.hpp"
#include "qlayout/io.hpp"

namespace qlayout {

namespace fs = std::filesystem;

std::string family_of(const std::string& stem) {
  const auto cut = stem.find('_');
  if (cut == std::string::npos || cut == 0) return "unknown";
  return stem.substr(0, cut);
}

ProgramGraph prepare_program_graph(const Circuit& c, const PolicyConfig& pcfg) {
  if (pcfg.features == FeatureKind::kOneHot) {
    return build_program_graph(c, std::max(pcfg.n_max, c.num_qubits));
  }
  ProgramGraph pg = build_program_graph(c);
  pg.node_features = c.gates.empty() ? Eigen::MatrixXd::Zero(c.num_qubits, kFeatureDim)
                                     : feature_matrix(extract_features(c));
  return pg;
}

Dataset load_dataset(const std::string& dir, const PolicyConfig& pcfg) {
  if (!fs::is_directory(dir)) throw InvalidArgument("dataset '" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".qasm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  Dataset data;
  for (const fs::path& file : files) {
    const std::string stem = file.stem().string();
    try {
      const Circuit c = load_qasm(file.string());
      if (c.num_qubits > pcfg.num_physical) {
        throw InvalidArgument(std::to_string(c.num_qubits) + " qubits exceed the device");
      }
      if (pcfg.features == FeatureKind::kOneHot && c.num_qubits > pcfg.n_max) {
        throw InvalidArgument(std::to_string(c.num_qubits) + " qubits exceed the policy's n_max " +
                              std::to_string(pcfg.n_max));
      }
      if (c.num_qubits < 1) throw InvalidArgument("no qubits declared");
      data.instances.push_back({stem, family_of(stem), c.two_qubit_gate_count(), prepare_program_graph(c, pcfg)});
    } catch (const Error& ex) {
      data.skipped.push_back(file.filename().string() + ": " + ex.what());
    }
  }
  return data;
}

BaselineMap parse_baseline(const std::string& text) {
  const CsvTable table = parse_csv(text);
  const int ci = table.column("instance"), cc = table.column("cost");
  if (ci < 0 || cc < 0) throw ParseError("baseline CSV needs 'instance' and 'cost' columns", 1);
  BaselineMap out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    std::string id = table.rows[r][ci];
    if (id.size() > 5 && id.ends_with(".qasm")) id.resize(id.size() - 5);
    const std::string& field = table.rows[r][cc];
    std::size_t used = 0;
    double cost = 0.0;
    try {
      cost = std::stod(field, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (id.empty() || used == 0 || used != field.size()) {
      throw ParseError("bad baseline row '" + id + "," + field + "'", table.row_lines[r]);
    }
    out[id] = cost;
  }
  return out;
}

BaselineMap import_baseline(const std::string& path) { return parse_baseline(read_text_file(path)); }

void check_device(const PolicyParams& policy, const CouplingGraph& cg) {
  const PolicyConfig& c = policy.config;
  if (c.num_physical != cg.num_physical()) {
    throw ConfigError("checkpoint expects " + std::to_string(c.num_physical) +
                      " physical qubits, device '" + cg.name() + "' has " +
                      std::to_string(cg.num_physical()));
  }
  if (!c.device_hash.empty() && c.device_hash != cg.topology_hash()) {
    throw ConfigError("checkpoint was trained on device '" + c.device_name + "' (" + c.device_hash +
                      "), not '" + cg.name() + "' (" + cg.topology_hash() + ")");
  }
}

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

BenchReport run_bench(const BenchRun& run, const PolicyParams& policy, const CouplingGraph& cg,
                      const Dataset& data, const BaselineMap* baseline) {
  check_device(policy, cg);
  BenchReport report;
  report.skipped = data.skipped;
  if (baseline != nullptr) {
    std::set<std::string> ids;
    for (const BenchInstance& inst : data.instances) ids.insert(inst.id);
    for (const auto& [id, cost] : *baseline) {
      if (!ids.count(id)) report.warnings.push_back("baseline instance '" + id + "' is not in the dataset");
    }
  }

  for (const BenchInstance& inst : data.instances) {
    std::optional<double> base;
    if (baseline != nullptr) {
      auto it = baseline->find(inst.id);
      if (it != baseline->end()) base = it->second;
    }
    for (DecodeKind kind : run.strategies) {
      for (std::uint64_t seed : run.seeds) {
        const std::uint64_t decode_seed = mix_seed(seed ^ fnv1a(inst.id));
        ReportRow row;
        row.instance = inst.id;
        row.family = inst.family;
        row.n = inst.graph.num_logical;
        row.two_qubit_gates = inst.two_qubit_gates;
        row.strategy = short_name(kind);
        row.seed = seed;
        row.baseline_cost = base;

        auto t0 = std::chrono::steady_clock::now();
        const DecodeResult d =
            decode(inst.graph, cg, policy, DecodeStrategy::make(kind, decode_seed, run.multistart_k),
                   run.cost_mode);
        row.wall_ms_rl = elapsed_ms(t0);
        row.rl_cost = d.cost;
        if (run.postprocess) {
          SearchConfig sc = run.search;
          sc.cost_mode = run.cost_mode;
          sc.seed = mix_seed(decode_seed + 1);
          t0 = std::chrono::steady_clock::now();
          const SearchResult s = local_search(d.layout, inst.graph, cg, sc);
          row.wall_ms_pp = elapsed_ms(t0);
          row.pp_cost = s.cost;
        }
        report.rows.push_back(std::move(row));
      }
    }
  }
  std::sort(report.rows.begin(), report.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    return std::tie(a.instance, a.strategy, a.seed) < std::tie(b.instance, b.strategy, b.seed);
  });
  return report;
}

void write_report_csv(std::ostream& out, const BenchReport& report, bool include_timing) {
  out << "instance,family,n,strategy,seed,rl_cost,pp_cost,baseline_cost";
  if (include_timing) out << ",wall_ms_rl,wall_ms_pp";
  out << '\n';
  for (const ReportRow& r : report.rows) {
    out << r.instance << ',' << r.family << ',' << r.n << ',' << r.strategy << ',' << r.seed << ','
        << format_number(r.rl_cost) << ',' << (r.pp_cost ? format_number(*r.pp_cost) : "") << ','
        << (r.baseline_cost ? format_number(*r.baseline_cost) : "");
    if (include_timing) {
      char buf[64];
      std::snprintf(buf, sizeof buf, ",%.3f,%.3f", r.wall_ms_rl, r.wall_ms_pp);
      out << buf;
    }
    out << '\n';
  }
}

namespace {

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  if (xs.empty()) return m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

nlohmann::json stats_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}}; }

// Per-seed group means, then mean and std across seeds.
nlohmann::json group_json(const std::vector<const ReportRow*>& rows) {
  std::map<std::uint64_t, std::vector<const ReportRow*>> by_seed;
  std::set<std::string> instances;
  for (const ReportRow* r : rows) {
    by_seed[r->seed].push_back(r);
    instances.insert(r->instance);
  }
  std::vector<double> rl, pp;
  bool have_pp = true;
  double base_sum = 0.0, ours_sum = 0.0;
  int base_count = 0;
  for (const auto& [seed, list] : by_seed) {
    double rl_sum = 0.0, pp_sum = 0.0;
    for (const ReportRow* r : list) {
      rl_sum += r->rl_cost;
      if (r->pp_cost) {
        pp_sum += *r->pp_cost;
      } else {
        have_pp = false;
      }
      if (r->baseline_cost) {
        base_sum += *r->baseline_cost;
        ours_sum += r->pp_cost ? *r->pp_cost : r->rl_cost;
        ++base_count;
      }
    }
    rl.push_back(rl_sum / static_cast<double>(list.size()));
    pp.push_back(pp_sum / static_cast<double>(list.size()));
  }
  nlohmann::json j;
  j["instances"] = instances.size();
  j["rows"] = rows.size();
  j["rl_cost"] = stats_json(mean_std(rl));
  j["pp_cost"] = have_pp && !rows.empty() ? stats_json(mean_std(pp)) : nlohmann::json(nullptr);
  if (base_count > 0) {
    const double base = base_sum / base_count, ours = ours_sum / base_count;
    j["baseline_cost"] = base;
    j["improvement_pct"] = base != 0.0 ? nlohmann::json(100.0 * (base - ours) / base) : nlohmann::json(nullptr);
  } else {
    j["baseline_cost"] = nullptr;
    j["improvement_pct"] = nullptr;
  }
  return j;
}

std::string bucket_label(int gates, int width) {
  const int lo = (gates / width) * width;
  return std::to_string(lo) + "-" + std::to_string(lo + width - 1);
}

}  // namespace

std::string summary_json(const BenchReport& report, const BenchRun& run) {
  std::set<std::string> instances;
  for (const ReportRow& r : report.rows) instances.insert(r.instance);

  // group kind -> group key -> strategy -> rows
  std::map<std::string, std::map<std::string, std::map<std::string, std::vector<const ReportRow*>>>> groups;
  for (const ReportRow& r : report.rows) {
    groups["overall"]["all"][r.strategy].push_back(&r);
    groups["family"][r.family][r.strategy].push_back(&r);
    groups["gate_bucket"][bucket_label(r.two_qubit_gates, std::max(1, run.gate_bucket))][r.strategy].push_back(&r);
  }
  nlohmann::json j;
  j["instances"] = instances.size();
  j["skipped"] = report.skipped;
  j["num_skipped"] = report.skipped.size();
  j["warnings"] = report.warnings;
  j["cost_mode"] = to_string(run.cost_mode);
  j["postprocess"] = run.postprocess;
  j["seeds"] = run.seeds;
  nlohmann::json g = nlohmann::json::object();
  for (const char* kind : {"overall", "family", "gate_bucket"}) g[kind] = nlohmann::json::object();
  for (const auto& [kind, keyed] : groups) {
    for (const auto& [key, by_strategy] : keyed) {
      for (const auto& [strategy, rows] : by_strategy) g[kind][key][strategy] = group_json(rows);
    }
  }
  j["groups"] = std::move(g);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Synthetic embeddable instances
// ---------------------------------------------------------------------------

EmbeddableInstance gen_embeddable_instance(const CouplingGraph& cg, int n, double edge_keep, Rng& rng) {
  const int N = cg.num_physical();
  if (n < 1 || n > N) throw InvalidArgument("embeddable instance needs 1 <= n <= N");
  if (edge_keep < 0 || edge_keep > 1) throw InvalidArgument("edge_keep must lie in [0, 1]");

  // Grow a connected region from a random seed qubit.
  std::vector<PhysicalQubit> region{static_cast<PhysicalQubit>(uniform_index(rng, N))};
  std::vector<bool> in(N, false);
  in[region[0]] = true;
  while (static_cast<int>(region.size()) < n) {
    std::vector<PhysicalQubit> frontier;
    for (PhysicalQubit p : region) {
      for (PhysicalQubit q : cg.neighbors()[p]) {
        if (!in[q] && std::find(frontier.begin(), frontier.end(), q) == frontier.end()) frontier.push_back(q);
      }
    }
    const PhysicalQubit next = frontier[uniform_index(rng, frontier.size())];
    in[next] = true;
    region.push_back(next);
  }
  // Hidden layout: a random permutation of the region.
  for (std::size_t i = region.size(); i > 1; --i) std::swap(region[i - 1], region[uniform_index(rng, i)]);
  std::vector<int> logical_of(N, -1);
  for (int i = 0; i < n; ++i) logical_of[region[i]] = i;

  EmbeddableInstance out;
  out.hidden = Layout(N, region);
  out.graph.num_logical = n;
  std::vector<ProgramGraph::Edge> induced;
  for (const auto& [a, b] : cg.edges()) {
    if (logical_of[a] >= 0 && logical_of[b] >= 0) induced.push_back({logical_of[a], logical_of[b]});
  }
  for (const auto& e : induced) {
    if (uniform_unit(rng) >= edge_keep) continue;
    out.graph.edges.push_back(uniform_index(rng, 2) == 0 ? e : ProgramGraph::Edge{e.to, e.from});
  }
  if (out.graph.edges.empty() && !induced.empty()) {
    out.graph.edges.push_back(induced[uniform_index(rng, induced.size())]);
  }
  out.graph.node_features = one_hot_features(n, n);
  return out;
}

void write_synthetic_dataset(const std::string& dir, const CouplingGraph& cg, int count, int n_min,
                             int n_max, double edge_keep, std::uint64_t seed) {
  if (n_min < 1 || n_max < n_min) throw InvalidArgument("need 1 <= n_min <= n_max");
  fs::create_directories(dir);
  Rng rng = make_rng(seed, 0x5e7);
  for (int i = 0; i < count; ++i) {
    const int n = n_min + static_cast<int>(uniform_index(rng, n_max - n_min + 1));
    const EmbeddableInstance inst = gen_embeddable_instance(cg, n, edge_keep, rng);
    char name[32];
    std::snprintf(name, sizeof name, "queko_%04d.qasm", i);
    write_text_file((fs::path(dir) / name).string(), circuit_to_qasm(circuit_from_graph(inst.graph)));
  }
}

// ---------------------------------------------------------------------------
// Context ablation
// ---------------------------------------------------------------------------

std::vector<AblationRow> run_context_ablation(const TrainConfig& tcfg, const PolicyConfig& pcfg,
                                              const CouplingGraph& cg,
                                              const std::vector<ProgramGraph>& eval, int multistart_k,
                                              std::uint64_t decode_seed) {
  const ContextKind kinds[] = {ContextKind::kProjectConcat, ContextKind::kConcatProject,
                               ContextKind::kStackProject};
  const DecodeKind strategies[] = {DecodeKind::kGreedy, DecodeKind::kSampling,
                                   DecodeKind::kMultistartGreedy, DecodeKind::kMultistartSampling};
  std::vector<AblationRow> rows;
  for (ContextKind kind : kinds) {
    PolicyConfig cfg = pcfg;
    cfg.decoder.context = kind;
    if (kind == ContextKind::kStackProject) cfg.decoder.context_dim = cfg.encoder.embed_dim;
    const TrainResult trained = train(tcfg, cfg, cg);
    AblationRow row{kind, {}};
    for (DecodeKind s : strategies) {
      double total = 0.0;
      for (std::size_t i = 0; i < eval.size(); ++i) {
        const DecodeStrategy strat = DecodeStrategy::make(s, mix_seed(decode_seed + i), multistart_k);
        total += decode(eval[i], cg, trained.policy, strat, tcfg.cost_mode).cost;
      }
      row.mean_cost[s] = eval.empty() ? 0.0 : total / static_cast<double>(eval.size());
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "encoding_strategy,greedy,sampling,multistart_greedy,multistart_sampling\n";
  for (const AblationRow& r : rows) {
    out << to_string(r.context);
    for (DecodeKind s : {DecodeKind::kGreedy, DecodeKind::kSampling, DecodeKind::kMultistartGreedy,
                         DecodeKind::kMultistartSampling}) {
      char buf[32];
      std::snprintf(buf, sizeof buf, ",%.4f", r.mean_cost.at(s));
      out << buf;
    }
    out << '\n';
  }
}

}  // namespace qlayout
