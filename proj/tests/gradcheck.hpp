// Finite-difference checks for every tape primitive.
#pragma once

#include <algorithm>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "oracles.hpp"
#include "qlayout/autodiff.hpp"

namespace gradcheck {

using qlayout::Rng;
using qlayout::ad::Tape;
using qlayout::ad::Var;
using Eigen::MatrixXd;
namespace ad = qlayout::ad;

using Builder = std::function<Var(Tape&, const std::vector<Var>&)>;

inline MatrixXd random_matrix(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = lo + (hi - lo) * qlayout::uniform_unit(rng);
  return m;
}

// Contracts the output with fixed random weights so every entry matters.
inline double weighted_output(const Builder& build, const std::vector<MatrixXd>& inputs, const MatrixXd* weights,
                              MatrixXd* weights_out, std::vector<MatrixXd>* grads) {
  Tape tape;
  std::vector<Var> vars;
  for (const MatrixXd& m : inputs) vars.push_back(tape.variable(m));
  const Var out = build(tape, vars);
  MatrixXd w;
  if (weights != nullptr) {
    w = *weights;
  } else {
    Rng rng = qlayout::make_rng(999, out.rows() * 131 + out.cols());
    w = random_matrix(rng, static_cast<int>(out.rows()), static_cast<int>(out.cols()));
  }
  if (weights_out != nullptr) *weights_out = w;
  const Var loss = ad::sum(ad::mul(out, tape.constant(w)));
  if (grads != nullptr) {
    tape.backward(loss);
    grads->clear();
    for (const Var& v : vars) grads->push_back(v.grad());
  }
  return loss.item();
}

inline double gradient_error(const Builder& build, const std::vector<MatrixXd>& inputs) {
  MatrixXd w;
  std::vector<MatrixXd> grads;
  weighted_output(build, inputs, nullptr, &w, &grads);
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto f = [&](const MatrixXd& xk) {
      std::vector<MatrixXd> in = inputs;
      in[k] = xk;
      return weighted_output(build, in, &w, nullptr, nullptr);
    };
    worst = std::max(worst, oracle::max_relative_error(grads[k], oracle::numeric_gradient(f, inputs[k])));
  }
  return worst;
}

struct Case {
  const char* name;
  std::vector<std::pair<int, int>> shapes;
  Builder build;
  double lo = -1.0;
  double hi = 1.0;
};

inline std::vector<Case> primitive_cases() {
  static const std::vector<int> idx{2, 0, 2, 1};
  static const std::vector<int> seg{0, 1, 0, 2, 1};
  static const ad::Mask mask = [] {
    ad::Mask m(3, 4);
    m << false, true, false, false, true, false, false, true, false, false, true, false;
    return m;
  }();
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); }},
      {"matmul_nt", {{3, 4}, {5, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::matmul_nt(v[0], v[1]); }},
      {"transpose", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::transpose(v[0]); }},
      {"add", {{3, 4}, {3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::add(v[0], v[1]); }},
      {"sub", {{3, 4}, {3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::sub(v[0], v[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::mul(v[0], v[1]); }},
      {"div", {{3, 4}, {3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::div(v[0], v[1]); }, 0.5, 2.0},
      {"scale", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::scale(v[0], -1.7); }},
      {"add_scalar", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::add_scalar(v[0], 0.3); }},
      {"add_row", {{3, 4}, {1, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::add_row(v[0], v[1]); }},
      {"mul_row", {{3, 4}, {1, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::mul_row(v[0], v[1]); }},
      {"mul_col", {{3, 4}, {3, 1}}, [](Tape&, const std::vector<Var>& v) { return ad::mul_col(v[0], v[1]); }},
      {"tanh", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::tanh(v[0]); }, -2.0, 2.0},
      {"exp", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::exp(v[0]); }},
      {"log", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::log(v[0]); }, 0.2, 3.0},
      {"sqrt", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::sqrt(v[0]); }, 0.2, 3.0},
      {"leaky_relu", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::leaky_relu(v[0], 0.2); }},
      {"elu", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::elu(v[0]); }},
      {"sum", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); }},
      {"mean", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::mean(v[0]); }},
      {"col_sums", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::col_sums(v[0]); }},
      {"row_sums", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::row_sums(v[0]); }},
      {"normalize_rows", {{3, 5}}, [](Tape&, const std::vector<Var>& v) { return ad::normalize_rows(v[0], 1e-5); }},
      {"normalize_cols", {{5, 3}}, [](Tape&, const std::vector<Var>& v) { return ad::normalize_cols(v[0], 1e-5); }},
      {"softmax_rows", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::softmax_rows(v[0]); }, -2.0, 2.0},
      {"log_softmax_rows", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::log_softmax_rows(v[0]); }, -2.0, 2.0},
      {"masked_fill", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::masked_fill(v[0], mask, 0.5); }},
      {"masked log-softmax", {{3, 4}}, [](Tape&, const std::vector<Var>& v) {
         const Var lp = ad::log_softmax_rows(ad::masked_fill(v[0], mask, -std::numeric_limits<double>::infinity()));
         return ad::pick(lp, {0, 1, 2}, {0, 1, 3});
       }},
      {"masked softmax", {{3, 4}}, [](Tape&, const std::vector<Var>& v) {
         return ad::softmax_rows(ad::masked_fill(v[0], mask, -std::numeric_limits<double>::infinity()));
       }},
      {"concat_cols", {{3, 2}, {3, 3}}, [](Tape&, const std::vector<Var>& v) { return ad::concat_cols<double>({v[0], v[1]}); }},
      {"concat_rows", {{2, 3}, {1, 3}}, [](Tape&, const std::vector<Var>& v) { return ad::concat_rows<double>({v[0], v[1]}); }},
      {"slice_cols", {{3, 5}}, [](Tape&, const std::vector<Var>& v) { return ad::slice_cols(v[0], 1, 3); }},
      {"gather_rows", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::gather_rows(v[0], idx); }},
      {"scatter_add_rows", {{4, 3}}, [](Tape&, const std::vector<Var>& v) { return ad::scatter_add_rows(v[0], idx, 3); }},
      {"segment_softmax", {{5, 2}}, [](Tape&, const std::vector<Var>& v) { return ad::segment_softmax(v[0], seg, 3); }},
      {"pick", {{3, 4}}, [](Tape&, const std::vector<Var>& v) { return ad::pick(v[0], {0, 2, 2}, {1, 3, 3}); }},
      {"sum_col_blocks", {{3, 6}}, [](Tape&, const std::vector<Var>& v) { return ad::sum_col_blocks(v[0], 2); }},
      {"repeat_each_col", {{3, 2}}, [](Tape&, const std::vector<Var>& v) { return ad::repeat_each_col(v[0], 3); }},
      {"composite", {{3, 4}, {4, 4}, {1, 4}}, [](Tape&, const std::vector<Var>& v) {
         const Var h = ad::elu(ad::add_row(ad::matmul(v[0], v[1]), v[2]));
         return ad::log_softmax_rows(ad::scale(ad::tanh(ad::normalize_rows(h, 1e-5)), 3.0));
       }},
  };
}

// Worst error over `points` random inputs.
inline double case_error(const Case& c, int points, Rng& rng) {
  double worst = 0.0;
  for (int point = 0; point < points; ++point) {
    std::vector<MatrixXd> inputs;
    for (auto [r, k] : c.shapes) inputs.push_back(random_matrix(rng, r, k, c.lo, c.hi));
    worst = std::max(worst, gradient_error(c.build, inputs));
  }
  return worst;
}

}  // namespace gradcheck
