#include "qlayout/circuit.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "qlayout/error.hpp"

namespace qlayout {

int Circuit::two_qubit_gate_count() const {
  return static_cast<int>(std::count_if(gates.begin(), gates.end(),
                                        [](const Gate& g) { return g.is_two_qubit(); }));
}

int ProgramGraph::multiplicity(LogicalQubit from, LogicalQubit to) const {
  return static_cast<int>(std::count_if(edges.begin(), edges.end(), [&](const Edge& e) {
    return e.from == from && e.to == to;
  }));
}

namespace {

const std::set<std::string>& single_qubit_gates() {
  static const std::set<std::string> names{"id", "u0", "u1", "u2",  "u3",   "u",  "U",  "p",
                                           "x",  "y",  "z",  "h",   "s",    "sdg", "t", "tdg",
                                           "sx", "sxdg", "rx", "ry", "rz"};
  return names;
}

const std::set<std::string>& two_qubit_gates() {
  static const std::set<std::string> names{"cx", "CX", "cz", "swap"};
  return names;
}

struct Statement {
  std::string text;
  int line;
};

// Splits on ';' with comments removed; each statement remembers the line on
// which its first non-blank character appears.
std::vector<Statement> split_statements(std::string_view src) {
  std::vector<Statement> out;
  std::string cur;
  int line = 1;
  int start_line = 0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const char ch = src[i];
    if (ch == '/' && i + 1 < src.size() && src[i + 1] == '/') {
      while (i < src.size() && src[i] != '\n') ++i;
      if (i < src.size()) {
        ++line;
        cur.push_back(' ');
      }
      continue;
    }
    if (ch == '\n') {
      ++line;
      cur.push_back(' ');
      continue;
    }
    if (ch == '{' || ch == '}') {
      throw ParseError("gate definitions and blocks are not supported", start_line ? start_line : line);
    }
    if (ch == ';') {
      out.push_back({cur, start_line ? start_line : line});
      cur.clear();
      start_line = 0;
      continue;
    }
    if (!std::isspace(static_cast<unsigned char>(ch)) && start_line == 0) start_line = line;
    cur.push_back(ch);
  }
  if (start_line != 0) throw ParseError("missing ';' at end of statement", start_line);
  return out;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

bool is_identifier(std::string_view s) {
  if (s.empty() || !(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

struct Register {
  int offset;
  int size;
};

class Parser {
 public:
  Circuit run(std::string_view src) {
    for (const auto& st : split_statements(src)) statement(trim(st.text), st.line);
    circuit_.num_qubits = total_;
    return std::move(circuit_);
  }

 private:
  void statement(const std::string& s, int line) {
    if (s.empty()) return;
    std::size_t i = 0;
    while (i < s.size() && (std::isalnum(static_cast<unsigned char>(s[i])) || s[i] == '_')) ++i;
    const std::string head = s.substr(0, i);
    const std::string rest = trim(std::string_view(s).substr(i));
    if (head.empty()) throw ParseError("expected a statement, got '" + s + "'", line);

    if (head == "OPENQASM") {
      if (rest.empty()) throw ParseError("OPENQASM needs a version", line);
      return;
    }
    if (head == "include") return;
    if (head == "qreg" || head == "creg") {
      declare(head == "qreg", rest, line);
      return;
    }
    if (head == "barrier" || head == "reset") return;
    if (head == "measure") {
      if (rest.find("->") == std::string::npos) throw ParseError("measure needs '->'", line);
      return;
    }
    if (head == "gate" || head == "opaque" || head == "if") {
      throw ParseError("'" + head + "' statements are not supported", line);
    }

    std::string args = rest;
    if (!args.empty() && args.front() == '(') {
      int depth = 0;
      std::size_t j = 0;
      for (; j < args.size(); ++j) {
        if (args[j] == '(') ++depth;
        if (args[j] == ')' && --depth == 0) break;
      }
      if (j == args.size()) throw ParseError("unbalanced parentheses in gate parameters", line);
      args = trim(std::string_view(args).substr(j + 1));
    }
    const bool single = single_qubit_gates().count(head) > 0;
    const bool two = two_qubit_gates().count(head) > 0;
    if (!single && !two) throw UnsupportedGate(head, line);

    std::vector<std::vector<LogicalQubit>> operands;
    std::stringstream ss(args);
    std::string arg;
    while (std::getline(ss, arg, ',')) operands.push_back(resolve(trim(arg), line));
    const std::size_t arity = two ? 2 : 1;
    if (operands.size() != arity) {
      throw ParseError("gate '" + head + "' takes " + std::to_string(arity) + " operand(s), got " +
                           std::to_string(operands.size()),
                       line);
    }

    // Register broadcast: full registers must agree in size, single qubits repeat.
    std::size_t width = 1;
    for (const auto& o : operands) {
      if (o.size() > 1) {
        if (width > 1 && o.size() != width) throw ParseError("register size mismatch", line);
        width = o.size();
      }
    }
    for (std::size_t k = 0; k < width; ++k) {
      Gate g{head == "CX" ? "cx" : head, {}};
      for (const auto& o : operands) g.qubits.push_back(o.size() == 1 ? o[0] : o[k]);
      if (two && g.qubits[0] == g.qubits[1]) {
        throw ParseError("two-qubit gate '" + head + "' applied to the same qubit twice", line);
      }
      circuit_.gates.push_back(std::move(g));
    }
  }

  void declare(bool quantum, const std::string& rest, int line) {
    const auto lb = rest.find('[');
    const auto rb = rest.find(']');
    if (lb == std::string::npos || rb == std::string::npos || rb < lb ||
        !trim(std::string_view(rest).substr(rb + 1)).empty()) {
      throw ParseError("malformed register declaration '" + rest + "'", line);
    }
    const std::string name = trim(std::string_view(rest).substr(0, lb));
    const int size = parse_int(trim(std::string_view(rest).substr(lb + 1, rb - lb - 1)), line);
    if (!is_identifier(name) || size < 1) throw ParseError("malformed register declaration", line);
    if (qregs_.count(name) || cregs_.count(name)) {
      throw ParseError("register '" + name + "' redeclared", line);
    }
    if (quantum) {
      qregs_[name] = {total_, size};
      total_ += size;
    } else {
      cregs_.insert(name);
    }
  }

  std::vector<LogicalQubit> resolve(const std::string& arg, int line) const {
    const auto lb = arg.find('[');
    const std::string name = trim(std::string_view(arg).substr(0, lb));
    auto it = qregs_.find(name);
    if (it == qregs_.end()) throw ParseError("unknown quantum register '" + name + "'", line);
    const Register& reg = it->second;
    if (lb == std::string::npos) {
      std::vector<LogicalQubit> all(reg.size);
      for (int k = 0; k < reg.size; ++k) all[k] = reg.offset + k;
      return all;
    }
    const auto rb = arg.find(']', lb);
    if (rb == std::string::npos || rb + 1 != arg.size()) {
      throw ParseError("malformed qubit reference '" + arg + "'", line);
    }
    const int idx = parse_int(trim(std::string_view(arg).substr(lb + 1, rb - lb - 1)), line);
    if (idx < 0 || idx >= reg.size) {
      throw ParseError("qubit index " + std::to_string(idx) + " out of range for '" + name + "'",
                       line);
    }
    return {reg.offset + idx};
  }

  static int parse_int(const std::string& s, int line) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](char c) {
          return std::isdigit(static_cast<unsigned char>(c));
        })) {
      throw ParseError("expected an integer, got '" + s + "'", line);
    }
    return std::stoi(s);
  }

  Circuit circuit_;
  std::map<std::string, Register> qregs_;
  std::set<std::string> cregs_;
  int total_ = 0;
};

}  // namespace

Circuit parse_qasm(std::string_view source) { return Parser{}.run(source); }

Circuit load_qasm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_qasm(ss.str());
}

Eigen::MatrixXd one_hot_features(int n, int width) {
  if (width < n) {
    throw ShapeError("one-hot width " + std::to_string(width) + " is smaller than n = " +
                     std::to_string(n));
  }
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, width);
  for (int i = 0; i < n; ++i) x(i, i) = 1.0;
  return x;
}

ProgramGraph build_program_graph(const Circuit& c, int feature_width) {
  ProgramGraph pg;
  pg.num_logical = c.num_qubits;
  for (const Gate& g : c.gates) {
    if (g.is_two_qubit()) pg.edges.push_back({g.control(), g.target()});
  }
  pg.node_features = one_hot_features(c.num_qubits, feature_width == 0 ? c.num_qubits : feature_width);
  return pg;
}

std::vector<FeatureVector> extract_features(const Circuit& c, int walk_radius) {
  const int n = c.num_qubits;
  const auto eta = static_cast<double>(c.gates.size());
  if (c.gates.empty()) throw EmptyCircuit("feature extraction needs at least one gate");
  if (n < 1) throw EmptyCircuit("circuit declares no qubits");
  if (walk_radius < 0) throw InvalidArgument("walk radius must be non-negative");

  std::vector<FeatureVector> out(n, FeatureVector{});
  Eigen::MatrixXd adjacency = Eigen::MatrixXd::Zero(n, n);
  for (const Gate& g : c.gates) {
    if (g.is_two_qubit()) {
      out[g.control()][1] += 1.0;
      out[g.target()][2] += 1.0;
      adjacency(g.control(), g.target()) += 1.0;
    } else {
      out[g.qubits[0]][0] += 1.0;
    }
  }
  for (auto& f : out) {
    for (int k = 0; k < 3; ++k) f[k] /= eta;
  }

  // Influence: time-respecting reachability with at most `walk_radius` hops,
  // one hop per two-qubit gate.
  // Causal cone: the same walk without the hop limit.
  constexpr int kUnreached = -1;
  std::vector<int> hops(n);
  for (int src = 0; src < n; ++src) {
    for (int pass = 0; pass < 2; ++pass) {
      const bool bounded = pass == 0;
      std::fill(hops.begin(), hops.end(), kUnreached);
      hops[src] = 0;
      for (const Gate& g : c.gates) {
        if (!g.is_two_qubit()) continue;
        const int a = g.qubits[0], b = g.qubits[1];
        auto spread = [&](int from_hops, int to_hops) {
          if (from_hops == kUnreached || (bounded && from_hops >= walk_radius)) return to_hops;
          return to_hops == kUnreached ? from_hops + 1 : std::min(to_hops, from_hops + 1);
        };
        const int ha = hops[a], hb = hops[b];
        hops[a] = spread(hb, ha);
        hops[b] = spread(ha, hb);
      }
      const auto reached = std::count_if(hops.begin(), hops.end(), [](int h) { return h != kUnreached; });
      if (bounded) {
        out[src][3] = n > 1 ? static_cast<double>(reached - 1) / (n - 1) : 0.0;
      } else {
        out[src][5] = static_cast<double>(reached) / n;
      }
    }
  }

  // Pagerank on the row-normalized interaction adjacency; rows without
  // out-edges spread their mass uniformly.
  constexpr double kDamping = 0.85;
  constexpr double kTol = 1e-9;
  constexpr int kMaxIter = 200;
  const Eigen::VectorXd out_degree = adjacency.rowwise().sum();
  Eigen::MatrixXd transition = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    if (out_degree(i) > 0) transition.row(i) = adjacency.row(i) / out_degree(i);
  }
  Eigen::VectorXd rank = Eigen::VectorXd::Constant(n, 1.0 / n);
  for (int it = 0; it < kMaxIter; ++it) {
    double dangling = 0.0;
    for (int i = 0; i < n; ++i) {
      if (out_degree(i) == 0) dangling += rank(i);
    }
    Eigen::VectorXd next = (transition.transpose() * rank).array() + dangling / n;
    next = next.array() * kDamping + (1.0 - kDamping) / n;
    const double residual = (next - rank).lpNorm<1>();
    rank = next;
    if (residual < kTol) break;
  }
  rank /= rank.sum();
  for (int i = 0; i < n; ++i) out[i][4] = rank(i);
  return out;
}

Eigen::MatrixXd feature_matrix(const std::vector<FeatureVector>& features) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(features.size()), kFeatureDim);
  for (std::size_t i = 0; i < features.size(); ++i) {
    for (int k = 0; k < kFeatureDim; ++k) m(static_cast<Eigen::Index>(i), k) = features[i][k];
  }
  return m;
}

Circuit circuit_from_graph(const ProgramGraph& pg) {
  Circuit c;
  c.num_qubits = pg.num_logical;
  for (const auto& e : pg.edges) c.gates.push_back({"cx", {e.from, e.to}});
  return c;
}

std::string circuit_to_qasm(const Circuit& c) {
  std::ostringstream os;
  os << "OPENQASM 2.0;\ninclude \"qelib1.inc\";\nqreg q[" << c.num_qubits << "];\n";
  for (const Gate& g : c.gates) {
    os << g.kind << ' ';
    for (std::size_t k = 0; k < g.qubits.size(); ++k) {
      os << (k ? "," : "") << "q[" << g.qubits[k] << ']';
    }
    os << ";\n";
  }
  return os.str();
}

}  // namespace qlayout
