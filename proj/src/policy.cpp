#include "qlayout/policy.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "qlayout/error.hpp"
#include "qlayout/random.hpp"

namespace qlayout {

using ad::Var;
using Eigen::MatrixXd;

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kAttentionSlope = 0.2;
constexpr int kCheckpointVersion = 1;

template <typename Enum, std::size_t N>
Enum parse_enum(const std::string& s, const std::pair<const char*, Enum> (&table)[N],
                const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  std::string options;
  for (const auto& [name, value] : table) options += std::string(options.empty() ? "" : ", ") + name;
  throw InvalidArgument("unknown " + std::string(what) + " '" + s + "' (expected " + options + ")");
}

template <typename Enum, std::size_t N>
std::string enum_name(Enum e, const std::pair<const char*, Enum> (&table)[N]) {
  for (const auto& [name, value] : table) {
    if (value == e) return name;
  }
  return "?";
}

const std::pair<const char*, NormKind> kNormNames[] = {
    {"layer", NormKind::kLayer}, {"batch", NormKind::kBatch}, {"graph", NormKind::kGraph}};
const std::pair<const char*, ContextKind> kContextNames[] = {
    {"project_concat", ContextKind::kProjectConcat},
    {"concat_project", ContextKind::kConcatProject},
    {"stack_project", ContextKind::kStackProject}};
const std::pair<const char*, StackPool> kPoolNames[] = {
    {"mean", StackPool::kMean}, {"sum", StackPool::kSum}, {"last", StackPool::kLast}};
const std::pair<const char*, FeatureKind> kFeatureNames[] = {
    {"onehot", FeatureKind::kOneHot}, {"engineered", FeatureKind::kEngineered}};

std::string role_prefix(GraphRole role) { return role == GraphRole::kProgram ? "enc.prog" : "enc.phys"; }

std::string gat_prefix(const PolicyConfig& cfg, GraphRole role) {
  return cfg.encoder.shared ? "enc.shared" : role_prefix(role);
}

}  // namespace

NormKind parse_norm_kind(const std::string& s) { return parse_enum(s, kNormNames, "norm kind"); }
ContextKind parse_context_kind(const std::string& s) {
  return parse_enum(s, kContextNames, "context kind");
}
StackPool parse_stack_pool(const std::string& s) { return parse_enum(s, kPoolNames, "stack pool"); }
FeatureKind parse_feature_kind(const std::string& s) {
  return parse_enum(s, kFeatureNames, "feature kind");
}
std::string to_string(NormKind k) { return enum_name(k, kNormNames); }
std::string to_string(ContextKind k) { return enum_name(k, kContextNames); }
std::string to_string(StackPool k) { return enum_name(k, kPoolNames); }
std::string to_string(FeatureKind k) { return enum_name(k, kFeatureNames); }

void EncoderConfig::validate() const {
  if (layers < 1) throw ConfigError("encoder needs at least one layer");
  if (heads < 1 || embed_dim < 1) throw ConfigError("encoder heads and embed_dim must be positive");
  if (embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(heads) + " encoder heads");
  }
}

void DecoderConfig::validate(const EncoderConfig& enc) const {
  if (heads < 1) throw ConfigError("decoder needs at least one head");
  if (enc.embed_dim % heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(enc.embed_dim) + " is not divisible by " +
                      std::to_string(heads) + " decoder heads");
  }
  if (!(clip > 0)) throw ConfigError("pointer clip must be positive");
  if (context_dim < 1) throw ConfigError("context_dim must be positive");
  if (context == ContextKind::kProjectConcat && context_dim % 2 != 0) {
    throw ConfigError("project_concat needs an even context_dim");
  }
  if (context == ContextKind::kStackProject && context_dim != enc.embed_dim) {
    throw ConfigError("stack_project projects d_e -> d_e, so context_dim must equal embed_dim");
  }
}

void PolicyConfig::validate() const {
  encoder.validate();
  decoder.validate(encoder);
  if (n_max < 1) throw ConfigError("n_max must be positive");
  if (num_physical < 1) throw ConfigError("num_physical must be positive");
}

// ---------------------------------------------------------------------------
// ParamStore
// ---------------------------------------------------------------------------

int ParamStore::add(const std::string& name, MatrixXd init) {
  if (lookup_.count(name)) throw InvalidArgument("duplicate parameter '" + name + "'");
  const int id = static_cast<int>(values_.size());
  names_.push_back(name);
  values_.push_back(std::move(init));
  lookup_[name] = id;
  return id;
}

int ParamStore::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw InvalidArgument("no parameter named '" + name + "'");
  return it->second;
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

namespace {

MatrixXd uniform_matrix(Rng& rng, int rows, int cols, double bound) {
  MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c) {
    for (int r = 0; r < rows; ++r) m(r, c) = (2.0 * uniform_unit(rng) - 1.0) * bound;
  }
  return m;
}

MatrixXd fan_in_uniform(Rng& rng, int rows, int cols) {
  return uniform_matrix(rng, rows, cols, 1.0 / std::sqrt(static_cast<double>(rows)));
}

void add_norm(ParamStore& store, const std::string& prefix, NormKind kind, int d) {
  store.add(prefix + ".gamma", MatrixXd::Ones(1, d));
  store.add(prefix + ".beta", MatrixXd::Zero(1, d));
  if (kind == NormKind::kGraph) store.add(prefix + ".alpha", MatrixXd::Ones(1, d));
  if (kind == NormKind::kBatch) {
    store.buffers()[prefix + ".running_mean"] = MatrixXd::Zero(1, d);
    store.buffers()[prefix + ".running_var"] = MatrixXd::Ones(1, d);
  }
}

}  // namespace

PolicyParams init_policy(const PolicyConfig& config, std::uint64_t seed) {
  config.validate();
  PolicyParams policy{config, {}};
  ParamStore& store = policy.store;
  Rng rng = make_rng(seed, 0x9011c1);
  const int d = config.encoder.embed_dim;
  const int dh = d / config.encoder.heads;

  const GraphRole roles[] = {GraphRole::kProgram, GraphRole::kPhysical};
  for (GraphRole role : roles) {
    const std::string prefix = role_prefix(role);
    const int in_dim = role == GraphRole::kProgram ? config.program_feature_dim() : config.num_physical;
    store.add(prefix + ".in.W", fan_in_uniform(rng, in_dim, d));
    store.add(prefix + ".in.b", uniform_matrix(rng, 1, d, 1.0 / std::sqrt(in_dim)));
  }
  for (GraphRole role : roles) {
    if (config.encoder.shared && role == GraphRole::kPhysical) break;
    const std::string gat = gat_prefix(config, role);
    for (int l = 0; l < config.encoder.layers; ++l) {
      const std::string lp = gat + ".l" + std::to_string(l);
      store.add(lp + ".W", fan_in_uniform(rng, d, d));
      store.add(lp + ".a_src", uniform_matrix(rng, 1, d, 1.0 / std::sqrt(dh)));
      store.add(lp + ".a_dst", uniform_matrix(rng, 1, d, 1.0 / std::sqrt(dh)));
    }
  }
  for (GraphRole role : roles) {
    for (int l = 0; l < config.encoder.layers; ++l) {
      add_norm(store, role_prefix(role) + ".l" + std::to_string(l) + ".norm", config.encoder.norm, d);
    }
  }

  const DecoderConfig& dec = config.decoder;
  switch (dec.context) {
    case ContextKind::kProjectConcat:
      store.add("dec.ctx.W", fan_in_uniform(rng, d, dec.context_dim / 2));
      store.add("dec.start", uniform_matrix(rng, 1, d, 1.0 / std::sqrt(d)));
      break;
    case ContextKind::kConcatProject:
      store.add("dec.ctx.W", fan_in_uniform(rng, 2 * d, dec.context_dim));
      store.add("dec.start", uniform_matrix(rng, 1, d, 1.0 / std::sqrt(d)));
      break;
    case ContextKind::kStackProject:
      store.add("dec.ctx.W", fan_in_uniform(rng, d, d));
      break;
  }
  store.add("dec.Wq", fan_in_uniform(rng, dec.context_dim, d));
  store.add("dec.Wk", fan_in_uniform(rng, d, d));
  store.add("dec.Wv", fan_in_uniform(rng, d, d));
  store.add("dec.Wo", fan_in_uniform(rng, d, d));
  store.add("dec.Wkp", fan_in_uniform(rng, d, d));
  return policy;
}

MatrixXd program_inputs(const PolicyParams& policy, const ProgramGraph& pg) {
  const PolicyConfig& cfg = policy.config;
  if (cfg.features == FeatureKind::kOneHot) {
    if (pg.num_logical > cfg.n_max) {
      throw ShapeError("program has " + std::to_string(pg.num_logical) +
                       " qubits but the policy's one-hot input supports at most " +
                       std::to_string(cfg.n_max));
    }
    return one_hot_features(pg.num_logical, cfg.n_max);
  }
  if (pg.node_features.rows() != pg.num_logical || pg.node_features.cols() != kFeatureDim) {
    throw ShapeError("policy expects " + std::to_string(kFeatureDim) +
                     "-dim engineered features, graph carries [" +
                     std::to_string(pg.node_features.rows()) + "x" +
                     std::to_string(pg.node_features.cols()) + "]");
  }
  return pg.node_features;
}

// ---------------------------------------------------------------------------
// Graph batches
// ---------------------------------------------------------------------------

GraphBatch stack_program_graphs(const PolicyParams& policy,
                                std::span<const ProgramGraph* const> graphs) {
  GraphBatch batch;
  batch.num_graphs = static_cast<int>(graphs.size());
  int total = 0;
  for (const ProgramGraph* g : graphs) {
    batch.offsets.push_back(total);
    batch.sizes.push_back(g->num_logical);
    total += g->num_logical;
  }
  batch.features = MatrixXd::Zero(total, policy.config.program_feature_dim());
  for (int gi = 0; gi < batch.num_graphs; ++gi) {
    const ProgramGraph& g = *graphs[gi];
    const int off = batch.offsets[gi];
    batch.features.middleRows(off, g.num_logical) = program_inputs(policy, g);
    for (int i = 0; i < g.num_logical; ++i) {
      batch.graph_of_node.push_back(gi);
      batch.src.push_back(off + i);
      batch.dst.push_back(off + i);
    }
    for (const auto& e : g.edges) {
      batch.src.push_back(off + e.from);
      batch.dst.push_back(off + e.to);
      batch.src.push_back(off + e.to);
      batch.dst.push_back(off + e.from);
    }
  }
  return batch;
}

GraphBatch coupling_batch(const CouplingGraph& cg) {
  GraphBatch batch;
  const int N = cg.num_physical();
  batch.num_graphs = 1;
  batch.offsets = {0};
  batch.sizes = {N};
  batch.features = MatrixXd::Identity(N, N);
  batch.graph_of_node.assign(N, 0);
  for (int i = 0; i < N; ++i) {
    batch.src.push_back(i);
    batch.dst.push_back(i);
  }
  for (const auto& [a, b] : cg.edges()) {
    batch.src.push_back(a);
    batch.dst.push_back(b);
    batch.src.push_back(b);
    batch.dst.push_back(a);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

PolicyForward::PolicyForward(ad::Tape& tape, const PolicyParams& policy, PolicyMode mode,
                             bool requires_grad)
    : tape_(tape), policy_(policy), mode_(mode) {
  bound_.reserve(policy.store.size());
  for (const MatrixXd& v : policy.store.values()) {
    bound_.push_back(requires_grad ? tape.variable(v) : tape.constant(v));
  }
}

std::vector<MatrixXd> PolicyForward::gradients() const {
  std::vector<MatrixXd> grads;
  grads.reserve(bound_.size());
  for (const Var& v : bound_) grads.push_back(v.grad());
  return grads;
}

void update_running_stats(PolicyParams& policy, const std::map<std::string, ad::NormStats>& stats,
                          double momentum) {
  auto& buffers = policy.store.buffers();
  for (const auto& [prefix, s] : stats) {
    MatrixXd& mean = buffers.at(prefix + ".running_mean");
    MatrixXd& var = buffers.at(prefix + ".running_var");
    mean = (1.0 - momentum) * mean + momentum * s.mean;
    var = (1.0 - momentum) * var + momentum * s.variance;
  }
}

namespace {

Var apply_norm(PolicyForward& fw, const Var& x, const GraphBatch& batch, const std::string& prefix) {
  const NormKind kind = fw.config().encoder.norm;
  const ParamStore& store = fw.policy().store;
  Var y;
  switch (kind) {
    case NormKind::kLayer:
      y = ad::normalize_rows(x, kNormEps);
      break;
    case NormKind::kBatch:
      if (fw.mode() == PolicyMode::kTrain) {
        fw.observe(prefix, ad::batch_norm_stats<double>(x.value()));
        y = ad::normalize_cols(x, kNormEps);
      } else {
        const MatrixXd& mean = store.buffers().at(prefix + ".running_mean");
        const MatrixXd& var = store.buffers().at(prefix + ".running_var");
        const MatrixXd inv_std = (var.array() + kNormEps).rsqrt().matrix();
        y = ad::mul_row(ad::add_row(x, fw.constant(-mean)), fw.constant(inv_std));
      }
      break;
    case NormKind::kGraph: {
      MatrixXd inv_size(batch.num_graphs, 1);
      for (int g = 0; g < batch.num_graphs; ++g) inv_size(g, 0) = 1.0 / batch.sizes[g];
      const Var inv = fw.constant(inv_size);
      const Var mu = ad::mul_col(ad::scatter_add_rows(x, batch.graph_of_node, batch.num_graphs), inv);
      const Var shift = ad::mul_row(ad::gather_rows(mu, batch.graph_of_node), fw.param(prefix + ".alpha"));
      const Var centered = ad::sub(x, shift);
      const Var var = ad::mul_col(
          ad::scatter_add_rows(ad::mul(centered, centered), batch.graph_of_node, batch.num_graphs), inv);
      const Var denom = ad::sqrt(ad::add_scalar(ad::gather_rows(var, batch.graph_of_node), kNormEps));
      y = ad::div(centered, denom);
      break;
    }
  }
  return ad::add_row(ad::mul_row(y, fw.param(prefix + ".gamma")), fw.param(prefix + ".beta"));
}

}  // namespace

Var encode_batch(PolicyForward& fw, const GraphBatch& batch, GraphRole role) {
  const PolicyConfig& cfg = fw.config();
  const std::string prefix = role_prefix(role);
  const std::string gat = gat_prefix(cfg, role);
  const int expected_dim = role == GraphRole::kProgram ? cfg.program_feature_dim() : cfg.num_physical;
  if (batch.features.cols() != expected_dim) {
    throw ShapeError("encoder input for " + prefix + " expects " + std::to_string(expected_dim) +
                     " features, got " + std::to_string(batch.features.cols()));
  }
  const int heads = cfg.encoder.heads;
  const int dh = cfg.encoder.embed_dim / heads;
  const int nodes = batch.num_nodes();

  Var h = ad::add_row(ad::matmul(fw.constant(batch.features), fw.param(prefix + ".in.W")),
                      fw.param(prefix + ".in.b"));
  for (int l = 0; l < cfg.encoder.layers; ++l) {
    const std::string lp = gat + ".l" + std::to_string(l);
    const Var z = ad::matmul(h, fw.param(lp + ".W"));
    const Var score_src = ad::sum_col_blocks(ad::mul_row(z, fw.param(lp + ".a_src")), dh);
    const Var score_dst = ad::sum_col_blocks(ad::mul_row(z, fw.param(lp + ".a_dst")), dh);
    const Var e = ad::leaky_relu(
        ad::add(ad::gather_rows(score_dst, batch.dst), ad::gather_rows(score_src, batch.src)),
        kAttentionSlope);
    const Var alpha = ad::segment_softmax(e, batch.dst, nodes);
    const Var messages = ad::mul(ad::gather_rows(z, batch.src), ad::repeat_each_col(alpha, dh));
    const Var aggregated = ad::elu(ad::scatter_add_rows(messages, batch.dst, nodes));
    h = apply_norm(fw, aggregated, batch, prefix + ".l" + std::to_string(l) + ".norm");
  }
  return h;
}

DecoderCache prepare_decoder(PolicyForward& fw, const Var& physical) {
  return {ad::matmul(physical, fw.param("dec.Wk")), ad::matmul(physical, fw.param("dec.Wv")),
          ad::matmul(physical, fw.param("dec.Wkp"))};
}

Var context_batch(PolicyForward& fw, const Var& program, const std::vector<int>& current,
                  const std::vector<int>& previous, const std::vector<std::vector<int>>& stacked) {
  const DecoderConfig& dec = fw.config().decoder;
  const Var w = fw.param("dec.ctx.W");
  if (dec.context == ContextKind::kStackProject) {
    const int rows = static_cast<int>(stacked.size());
    std::vector<int> flat, owner;
    std::vector<int> last;
    MatrixXd inv_count(rows, 1);
    for (int r = 0; r < rows; ++r) {
      if (stacked[r].empty()) throw InvalidArgument("stack context needs at least the current qubit");
      for (int idx : stacked[r]) {
        flat.push_back(idx);
        owner.push_back(r);
      }
      last.push_back(stacked[r].back());
      inv_count(r, 0) = 1.0 / static_cast<double>(stacked[r].size());
    }
    Var pooled;
    switch (dec.stack_pool) {
      case StackPool::kMean:
        pooled = ad::mul_col(ad::scatter_add_rows(ad::gather_rows(program, flat), owner, rows),
                             fw.constant(inv_count));
        break;
      case StackPool::kSum:
        pooled = ad::scatter_add_rows(ad::gather_rows(program, flat), owner, rows);
        break;
      case StackPool::kLast:
        pooled = ad::gather_rows(program, last);
        break;
    }
    return ad::matmul(pooled, w);
  }

  // Row `program.rows()` of the extended table is the learned start token.
  const Var table = ad::concat_rows<double>({program, fw.param("dec.start")});
  const int start_row = static_cast<int>(program.rows());
  std::vector<int> prev_rows(previous.size());
  for (std::size_t r = 0; r < previous.size(); ++r) prev_rows[r] = previous[r] < 0 ? start_row : previous[r];
  const Var hc = ad::gather_rows(program, current);
  const Var hp = ad::gather_rows(table, prev_rows);
  if (dec.context == ContextKind::kProjectConcat) {
    return ad::concat_cols<double>({ad::matmul(hc, w), ad::matmul(hp, w)});
  }
  return ad::matmul(ad::concat_cols<double>({hc, hp}), w);
}

Var pointer_logits_batch(PolicyForward& fw, const DecoderCache& cache, const Var& context,
                         const ad::Mask* infeasible) {
  const PolicyConfig& cfg = fw.config();
  if (context.cols() != cfg.decoder.context_dim) {
    throw ShapeError("context has " + std::to_string(context.cols()) + " columns, decoder expects " +
                     std::to_string(cfg.decoder.context_dim));
  }
  const int d = cfg.encoder.embed_dim;
  const int heads = cfg.decoder.heads;
  const int dh = d / heads;
  const double inf = std::numeric_limits<double>::infinity();
  if (infeasible != nullptr) {
    for (Eigen::Index r = 0; r < infeasible->rows(); ++r) {
      if (infeasible->row(r).all()) throw InfeasibleState("decode row has no free physical qubit");
    }
  }

  const Var query = ad::matmul(context, fw.param("dec.Wq"));
  std::vector<Var> glimpses;
  glimpses.reserve(heads);
  for (int m = 0; m < heads; ++m) {
    Var scores = ad::scale(ad::matmul_nt(ad::slice_cols(query, m * dh, dh),
                                         ad::slice_cols(cache.glimpse_keys, m * dh, dh)),
                           1.0 / std::sqrt(static_cast<double>(dh)));
    if (infeasible != nullptr) scores = ad::masked_fill(scores, *infeasible, -inf);
    glimpses.push_back(
        ad::matmul(ad::softmax_rows(scores), ad::slice_cols(cache.glimpse_values, m * dh, dh)));
  }
  const Var glimpse = ad::matmul(ad::concat_cols(glimpses), fw.param("dec.Wo"));
  const Var compat = ad::scale(ad::matmul_nt(glimpse, cache.pointer_keys),
                               1.0 / std::sqrt(static_cast<double>(d)));
  return ad::scale(ad::tanh(compat), cfg.decoder.clip);
}

Var masked_log_probs(const Var& logits, const ad::Mask& infeasible) {
  for (Eigen::Index r = 0; r < infeasible.rows(); ++r) {
    if (infeasible.row(r).all()) throw InfeasibleState("no feasible action in decode row " + std::to_string(r));
  }
  return ad::log_softmax_rows(
      ad::masked_fill(logits, infeasible, -std::numeric_limits<double>::infinity()));
}

// ---------------------------------------------------------------------------
// Single-instance conveniences
// ---------------------------------------------------------------------------

NodeEmbeddings encode(const ProgramGraph& pg, const CouplingGraph& cg, const PolicyParams& policy,
                      PolicyMode mode) {
  if (cg.num_physical() != policy.config.num_physical) {
    throw ShapeError("policy was built for " + std::to_string(policy.config.num_physical) +
                     " physical qubits, device has " + std::to_string(cg.num_physical()));
  }
  ad::Tape tape;
  PolicyForward fw(tape, policy, mode, false);
  const ProgramGraph* graphs[] = {&pg};
  const Var prog = encode_batch(fw, stack_program_graphs(policy, graphs), GraphRole::kProgram);
  const Var phys = encode_batch(fw, coupling_batch(cg), GraphRole::kPhysical);
  return {prog.value(), phys.value()};
}

Eigen::VectorXd make_context(const NodeEmbeddings& emb, int current, std::span<const int> history,
                             const PolicyParams& policy) {
  if (current < 0 || current >= emb.program.rows()) {
    throw InvalidArgument("current logical index " + std::to_string(current) + " out of range");
  }
  ad::Tape tape;
  PolicyForward fw(tape, policy, PolicyMode::kEval, false);
  std::vector<int> stack(history.begin(), history.end());
  stack.push_back(current);
  const Var ctx = context_batch(fw, fw.constant(emb.program), {current},
                                {history.empty() ? -1 : history.back()}, {stack});
  return ctx.value().row(0).transpose();
}

Eigen::VectorXd pointer_logits(const Eigen::VectorXd& context, const MatrixXd& physical,
                               const PolicyParams& policy, const std::vector<bool>* assigned) {
  ad::Tape tape;
  PolicyForward fw(tape, policy, PolicyMode::kEval, false);
  const DecoderCache cache = prepare_decoder(fw, fw.constant(physical));
  ad::Mask mask;
  if (assigned != nullptr) {
    mask.resize(1, physical.rows());
    for (Eigen::Index p = 0; p < physical.rows(); ++p) mask(0, p) = (*assigned)[p];
  }
  const Var logits = pointer_logits_batch(fw, cache, fw.constant(context.transpose()),
                                          assigned != nullptr ? &mask : nullptr);
  return logits.value().row(0).transpose();
}

Eigen::VectorXd masked_distribution(const Eigen::VectorXd& logits, const std::vector<bool>& feasible) {
  if (static_cast<Eigen::Index>(feasible.size()) != logits.size()) {
    throw ShapeError("mask has " + std::to_string(feasible.size()) + " entries for " +
                     std::to_string(logits.size()) + " logits");
  }
  ad::Tape tape;
  ad::Mask mask(1, logits.size());
  for (Eigen::Index p = 0; p < logits.size(); ++p) mask(0, p) = !feasible[p];
  const Var logp = masked_log_probs(tape.constant(logits.transpose()), mask);
  return logp.value().row(0).array().exp().matrix().transpose();
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

nlohmann::json matrix_to_json(const MatrixXd& m) {
  nlohmann::json values = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(m(r, c));
  }
  return {{"shape", {m.rows(), m.cols()}}, {"values", std::move(values)}};
}

MatrixXd matrix_from_json(const nlohmann::json& j, const std::string& name) {
  const auto& shape = j.at("shape");
  if (shape.size() != 2) throw ParseError("tensor '" + name + "' must have a 2-d shape");
  const int rows = shape[0].get<int>(), cols = shape[1].get<int>();
  const auto& values = j.at("values");
  if (static_cast<int>(values.size()) != rows * cols) {
    throw ParseError("tensor '" + name + "' has " + std::to_string(values.size()) +
                     " values for shape [" + std::to_string(rows) + "x" + std::to_string(cols) + "]");
  }
  MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = values[r * cols + c].get<double>();
  }
  return m;
}

}  // namespace

std::string checkpoint_to_json(const PolicyParams& policy) {
  const PolicyConfig& cfg = policy.config;
  nlohmann::json j;
  j["header"] = {{"version", kCheckpointVersion},
                 {"d_e", cfg.encoder.embed_dim},
                 {"d_c", cfg.decoder.context_dim},
                 {"layers", cfg.encoder.layers},
                 {"heads", cfg.encoder.heads},
                 {"decoder_heads", cfg.decoder.heads},
                 {"clip", cfg.decoder.clip},
                 {"norm_kind", to_string(cfg.encoder.norm)},
                 {"context_kind", to_string(cfg.decoder.context)},
                 {"stack_pool", to_string(cfg.decoder.stack_pool)},
                 {"shared_encoder", cfg.encoder.shared},
                 {"features", to_string(cfg.features)},
                 {"n_max", cfg.n_max},
                 {"N", cfg.num_physical},
                 {"device_name", cfg.device_name},
                 {"device_hash", cfg.device_hash}};
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t k = 0; k < policy.store.size(); ++k) {
    params[policy.store.names()[k]] = matrix_to_json(policy.store.values()[k]);
  }
  j["params"] = std::move(params);
  nlohmann::json buffers = nlohmann::json::object();
  for (const auto& [name, m] : policy.store.buffers()) buffers[name] = matrix_to_json(m);
  j["buffers"] = std::move(buffers);
  return j.dump();
}

PolicyParams checkpoint_from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    const auto& h = j.at("header");
    if (h.at("version").get<int>() != kCheckpointVersion) {
      throw ParseError("unsupported checkpoint version " + h.at("version").dump());
    }
    PolicyConfig cfg;
    cfg.encoder.embed_dim = h.at("d_e").get<int>();
    cfg.encoder.layers = h.at("layers").get<int>();
    cfg.encoder.heads = h.at("heads").get<int>();
    cfg.encoder.norm = parse_norm_kind(h.at("norm_kind").get<std::string>());
    cfg.encoder.shared = h.value("shared_encoder", false);
    cfg.decoder.context_dim = h.at("d_c").get<int>();
    cfg.decoder.heads = h.at("decoder_heads").get<int>();
    cfg.decoder.clip = h.at("clip").get<double>();
    cfg.decoder.context = parse_context_kind(h.at("context_kind").get<std::string>());
    cfg.decoder.stack_pool = parse_stack_pool(h.value("stack_pool", std::string("mean")));
    cfg.features = parse_feature_kind(h.at("features").get<std::string>());
    cfg.n_max = h.at("n_max").get<int>();
    cfg.num_physical = h.at("N").get<int>();
    cfg.device_name = h.value("device_name", std::string());
    cfg.device_hash = h.value("device_hash", std::string());

    // Rebuild the expected layout, then overwrite every tensor from the file.
    PolicyParams policy = init_policy(cfg, 0);
    const auto& params = j.at("params");
    for (std::size_t k = 0; k < policy.store.size(); ++k) {
      const std::string& name = policy.store.names()[k];
      if (!params.contains(name)) throw ParseError("checkpoint is missing parameter '" + name + "'");
      MatrixXd m = matrix_from_json(params.at(name), name);
      MatrixXd& slot = policy.store.values()[k];
      if (m.rows() != slot.rows() || m.cols() != slot.cols()) {
        throw ShapeError("checkpoint parameter '" + name + "' has the wrong shape");
      }
      slot = std::move(m);
    }
    if (params.size() != policy.store.size()) {
      throw ParseError("checkpoint carries parameters this configuration does not use");
    }
    const auto buffers = j.value("buffers", nlohmann::json::object());
    for (auto& [name, slot] : policy.store.buffers()) {
      if (!buffers.contains(name)) throw ParseError("checkpoint is missing buffer '" + name + "'");
      slot = matrix_from_json(buffers.at(name), name);
    }
    return policy;
  } catch (const nlohmann::json::exception& ex) {
    throw ParseError(std::string("checkpoint JSON: ") + ex.what());
  }
}

void save_checkpoint(const PolicyParams& policy, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write '" + path + "'");
  out << checkpoint_to_json(policy);
}

PolicyParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace qlayout
