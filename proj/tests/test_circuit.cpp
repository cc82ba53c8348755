#include <doctest.h>

#include <numeric>

#include "qlayout/circuit.hpp"
#include "qlayout/error.hpp"
#include "qlayout/random.hpp"

using namespace qlayout;

namespace {

const char* kGhz3 = R"(OPENQASM 2.0;
include "qelib1.inc";
qreg q[3];
h q[0];
cx q[0],q[1];
cx q[1],q[2];
)";

}  // namespace

TEST_CASE("parse minimal circuits") {
  const Circuit two = parse_qasm("qreg q[2]; cx q[0],q[1];");
  CHECK(two.num_qubits == 2);
  REQUIRE(two.gates.size() == 1);
  CHECK(two.gates[0].is_two_qubit());
  CHECK(two.gates[0].control() == 0);
  CHECK(two.gates[0].target() == 1);

  const Circuit one = parse_qasm("qreg q[1]; h q[0];");
  CHECK(one.num_qubits == 1);
  REQUIRE(one.gates.size() == 1);
  CHECK_FALSE(one.gates[0].is_two_qubit());
}

TEST_CASE("GHZ-3 parses to three gates and a two-edge chain") {
  const Circuit c = parse_qasm(kGhz3);
  CHECK(c.gates.size() == 3);
  const ProgramGraph pg = build_program_graph(c);
  REQUIRE(pg.edges.size() == 2);
  CHECK(pg.multiplicity(0, 1) == 1);
  CHECK(pg.multiplicity(1, 2) == 1);
  CHECK(pg.multiplicity(1, 0) == 0);
  CHECK(pg.node_features.rows() == 3);
}

TEST_CASE("registers, parameters, broadcast and ignored statements") {
  const Circuit c = parse_qasm(R"(OPENQASM 2.0;
include "qelib1.inc";
qreg a[2];
qreg b[3];
creg m[5];
// comment line
u3(0.1, -pi/2, 0.3) a[1];
rz(pi/4) b[2];
barrier a, b;
cx a[0], b[1];
CX a[1],b[0];
cz b[1],b[2];
swap a[0],b[2];
h b;
measure a[0] -> m[0];
measure b[0] -> m[2];
reset a[0];
)");
  CHECK(c.num_qubits == 5);
  CHECK(c.two_qubit_gate_count() == 4);
  const ProgramGraph pg = build_program_graph(c);
  CHECK(pg.multiplicity(0, 3) == 1);  // a[0] -> b[1]
  CHECK(pg.multiplicity(1, 2) == 1);  // a[1] -> b[0]
  CHECK(pg.multiplicity(3, 4) == 1);
  CHECK(pg.multiplicity(0, 4) == 1);
  // u3 + rz + h broadcast over b (3) = 5 single-qubit gates.
  CHECK(c.gates.size() == 9);
}

TEST_CASE("register broadcast on two-qubit gates") {
  const Circuit c = parse_qasm("qreg a[2]; qreg b[2]; cx a,b;");
  REQUIRE(c.gates.size() == 2);
  CHECK(c.gates[0].qubits == std::vector<int>{0, 2});
  CHECK(c.gates[1].qubits == std::vector<int>{1, 3});
}

TEST_CASE("parse errors carry line numbers") {
  try {
    parse_qasm("qreg q[2];\nh q[0];\ncx q[0] q[1];\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  CHECK_THROWS_AS(parse_qasm("qreg q[2];\nh q[5];\n"), ParseError);
  CHECK_THROWS_AS(parse_qasm("qreg q[2];\ncx q[0],q[0];\n"), ParseError);
  CHECK_THROWS_AS(parse_qasm("qreg q[2];\nh q[0]\n"), ParseError);
  CHECK_THROWS_AS(parse_qasm("qreg q[2];\nh r[0];\n"), ParseError);
  CHECK_THROWS_AS(parse_qasm("qreg q[2];\ngate foo a { h a; }\n"), ParseError);
  try {
    parse_qasm("qreg q[3];\n\nccx q[0],q[1],q[2];\n");
    FAIL("expected UnsupportedGate");
  } catch (const UnsupportedGate& e) {
    CHECK(e.gate() == "ccx");
  }
}

TEST_CASE("multiplicity and empty edge sets") {
  const ProgramGraph twice = build_program_graph(parse_qasm("qreg q[2]; cx q[0],q[1]; cx q[0],q[1];"));
  CHECK(twice.multiplicity(0, 1) == 2);
  const ProgramGraph none = build_program_graph(parse_qasm("qreg q[3]; h q[0]; x q[2];"));
  CHECK(none.edges.empty());
  CHECK(none.num_logical == 3);
}

TEST_CASE("one-hot padding") {
  const ProgramGraph pg = build_program_graph(parse_qasm(kGhz3), 5);
  CHECK(pg.node_features.rows() == 3);
  CHECK(pg.node_features.cols() == 5);
  CHECK(pg.node_features(1, 1) == 1.0);
  CHECK(pg.node_features.sum() == 3.0);
}

TEST_CASE("operation densities") {
  // 4 gates; qubit 0 has one single-qubit gate.
  const Circuit c = parse_qasm("qreg q[3]; h q[0]; cx q[0],q[1]; cx q[1],q[2]; x q[2];");
  const auto f = extract_features(c);
  CHECK(f[0][0] == doctest::Approx(0.25));
  CHECK(f[0][1] == doctest::Approx(0.25));
  CHECK(f[0][2] == doctest::Approx(0.0));
  CHECK(f[1][1] == doctest::Approx(0.25));
  CHECK(f[1][2] == doctest::Approx(0.25));
  CHECK(f[2][0] == doctest::Approx(0.25));
  CHECK(f[2][2] == doctest::Approx(0.25));
}

TEST_CASE("isolated qubit has zero influence and a singleton cone") {
  const Circuit c = parse_qasm("qreg q[4]; cx q[0],q[1]; h q[3]; cx q[1],q[2];");
  const auto f = extract_features(c);
  CHECK(f[3][3] == 0.0);
  CHECK(f[3][5] == doctest::Approx(0.25));
}

TEST_CASE("causal cone follows gate order") {
  const auto f = extract_features(parse_qasm(kGhz3));
  CHECK(f[0][5] == doctest::Approx(1.0));
  CHECK(f[1][5] == doctest::Approx(1.0));
  // Qubit 2 only enters at the last gate, reaching qubit 1.
  CHECK(f[2][5] == doctest::Approx(2.0 / 3.0));

  // cx(1,2) precedes cx(0,1): qubit 0 reaches 1 but not 2.
  const auto g = extract_features(parse_qasm("qreg q[3]; cx q[1],q[2]; cx q[0],q[1];"));
  CHECK(g[0][5] == doctest::Approx(2.0 / 3.0));
  CHECK(g[0][3] == doctest::Approx(0.5));
}

TEST_CASE("influence respects the hop limit") {
  // Chain 0-1-2-3-4 in gate order: qubit 0 reaches k only after k hops.
  const Circuit c = parse_qasm("qreg q[5]; cx q[0],q[1]; cx q[1],q[2]; cx q[2],q[3]; cx q[3],q[4];");
  CHECK(extract_features(c, 1)[0][3] == doctest::Approx(0.25));
  CHECK(extract_features(c, 2)[0][3] == doctest::Approx(0.5));
  CHECK(extract_features(c, 4)[0][3] == doctest::Approx(1.0));
  CHECK(extract_features(c, 0)[0][3] == 0.0);
  CHECK(extract_features(c, 1)[0][5] == doctest::Approx(1.0));
}

TEST_CASE("feature invariants on random circuits") {
  Rng rng = make_rng(5);
  const char* singles[] = {"h", "x", "t", "s"};
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 6));
    std::string src = "qreg q[" + std::to_string(n) + "];\n";
    int singles_count = 0, doubles_count = 0;
    const int gates = 1 + static_cast<int>(uniform_index(rng, 20));
    for (int g = 0; g < gates; ++g) {
      if (uniform_index(rng, 2) == 0) {
        src += std::string(singles[uniform_index(rng, 4)]) + " q[" + std::to_string(uniform_index(rng, n)) + "];\n";
        ++singles_count;
      } else {
        const int a = static_cast<int>(uniform_index(rng, n));
        int b = static_cast<int>(uniform_index(rng, n - 1));
        if (b >= a) ++b;
        src += "cx q[" + std::to_string(a) + "],q[" + std::to_string(b) + "];\n";
        ++doubles_count;
      }
    }
    const Circuit c = parse_qasm(src);
    const auto f = extract_features(c);
    const auto f2 = extract_features(c);
    double single_sum = 0.0, two_sum = 0.0, pr = 0.0;
    for (int j = 0; j < n; ++j) {
      CHECK(f[j] == f2[j]);
      single_sum += f[j][0];
      two_sum += f[j][1] + f[j][2];
      pr += f[j][4];
      CHECK(f[j][3] >= 0.0);
      CHECK(f[j][3] <= 1.0);
      CHECK(f[j][5] > 0.0);
      CHECK(f[j][5] <= 1.0);
      CHECK(f[j][4] >= 0.0);
    }
    // Each gate contributes its operand count to the incidence totals.
    CHECK((single_sum + two_sum) * gates == doctest::Approx(singles_count + 2.0 * doubles_count));
    CHECK(pr == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("pagerank is a fixed point of the damped iteration") {
  const Circuit c = parse_qasm("qreg q[4]; cx q[0],q[1]; cx q[1],q[2]; cx q[2],q[0]; cx q[0],q[3]; cx q[0],q[1];");
  const auto f = extract_features(c);
  // Independent recomputation: counts, row normalize, dangling spread uniformly.
  const int n = 4;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  a(0, 1) = 2; a(1, 2) = 1; a(2, 0) = 1; a(0, 3) = 1;
  Eigen::VectorXd r(n);
  for (int i = 0; i < n; ++i) r(i) = f[i][4];
  Eigen::VectorXd next = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const double out = a.row(i).sum();
    for (int j = 0; j < n; ++j) next(j) += out > 0 ? r(i) * a(i, j) / out : r(i) / n;
  }
  next = 0.85 * next.array() + 0.15 / n;
  CHECK((next - r).lpNorm<1>() < 1e-8);
}

TEST_CASE("empty circuits are rejected by feature extraction") {
  CHECK_THROWS_AS(extract_features(parse_qasm("qreg q[2];")), EmptyCircuit);
}

TEST_CASE("qasm writer round trip") {
  const Circuit c = parse_qasm(kGhz3);
  const Circuit back = parse_qasm(circuit_to_qasm(c));
  REQUIRE(back.gates.size() == c.gates.size());
  for (std::size_t i = 0; i < c.gates.size(); ++i) {
    CHECK(back.gates[i].kind == c.gates[i].kind);
    CHECK(back.gates[i].qubits == c.gates[i].qubits);
  }
}
