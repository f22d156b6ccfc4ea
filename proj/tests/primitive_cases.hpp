#pragma once

// Per-primitive finite-difference harness shared by the diffcore tests and
// the acceptance runner.

#include <algorithm>
#include <functional>
#include <random>
#include <vector>

#include "cmwm/diffcore.hpp"
#include "support.hpp"

namespace cmwm::testing {

inline Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n01(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.values()) v = n01(rng);
  return t;
}

// Builds sum(op(inputs) * R) for a fixed random R, differentiates it on a
// tape and compares every input entry with central differences.
inline double primitive_max_error(const std::vector<Tensor>& inputs,
                           const std::function<Var(Tape&, std::vector<Var>&)>& op,
                           std::mt19937_64& rng) {
  Tensor weights;
  auto evaluate = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(tape.variable(x));
    const Var out = op(tape, vars);
    if (weights.empty()) weights = random_tensor(out.rows(), out.cols(), rng);
    const Var loss = sum(mul(out, tape.constant(weights)));
    if (grads != nullptr) {
      tape.backward(loss);
      for (const auto& v : vars) grads->push_back(tape.grad(v));
    }
    return loss.item();
  };

  std::vector<Tensor> analytic;
  evaluate(inputs, &analytic);
  const double h = 1e-5;
  double worst = 0.0;
  std::vector<Tensor> xs = inputs;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t k = 0; k < xs[i].size(); ++k) {
      const double saved = xs[i][k];
      xs[i][k] = saved + h;
      const double up = evaluate(xs, nullptr);
      xs[i][k] = saved - h;
      const double down = evaluate(xs, nullptr);
      xs[i][k] = saved;
      worst = std::max(worst, rel_error(analytic[i][k], (up - down) / (2 * h)));
    }
  }
  return worst;
}

struct PrimitiveCase {
  const char* name;
  std::function<std::vector<Tensor>(std::mt19937_64&)> inputs;
  std::function<Var(Tape&, std::vector<Var>&)> op;
};

inline std::vector<PrimitiveCase> primitive_cases() {
  auto shapes = [](std::vector<std::pair<int, int>> dims, double scale = 1.0) {
    return [dims, scale](std::mt19937_64& rng) {
      std::vector<Tensor> out;
      for (auto [r, c] : dims) out.push_back(random_tensor(r, c, rng, scale));
      return out;
    };
  };
  return {
      {"affine", shapes({{3, 4}, {5, 4}, {1, 5}}),
       [](Tape&, std::vector<Var>& v) { return affine(v[0], v[1], v[2]); }},
      {"matmul", shapes({{3, 4}, {4, 2}}),
       [](Tape&, std::vector<Var>& v) { return matmul(v[0], v[1]); }},
      {"matmul_nt", shapes({{3, 4}, {5, 4}}),
       [](Tape&, std::vector<Var>& v) { return matmul_nt(v[0], v[1]); }},
      {"add", shapes({{2, 3}, {2, 3}}), [](Tape&, std::vector<Var>& v) { return add(v[0], v[1]); }},
      {"sub", shapes({{2, 3}, {2, 3}}), [](Tape&, std::vector<Var>& v) { return sub(v[0], v[1]); }},
      {"mul", shapes({{2, 3}, {2, 3}}), [](Tape&, std::vector<Var>& v) { return mul(v[0], v[1]); }},
      {"scale", shapes({{2, 3}}), [](Tape&, std::vector<Var>& v) { return scale(v[0], -1.7); }},
      {"add_scalar", shapes({{2, 3}}),
       [](Tape&, std::vector<Var>& v) { return add_scalar(v[0], 0.4); }},
      {"concat_cols", shapes({{2, 3}, {2, 1}, {2, 2}}),
       [](Tape&, std::vector<Var>& v) { return concat_cols({v[0], v[1], v[2]}); }},
      {"slice_cols", shapes({{2, 6}}),
       [](Tape&, std::vector<Var>& v) { return slice_cols(v[0], 2, 3); }},
      {"concat_rows", shapes({{2, 3}, {1, 3}}),
       [](Tape&, std::vector<Var>& v) { return concat_rows(std::span<const Var>(v)); }},
      {"sigmoid", shapes({{2, 4}}, 2.0), [](Tape&, std::vector<Var>& v) { return sigmoid(v[0]); }},
      {"tanh", shapes({{2, 4}}, 2.0), [](Tape&, std::vector<Var>& v) { return tanh(v[0]); }},
      {"gelu", shapes({{2, 4}}, 2.0), [](Tape&, std::vector<Var>& v) { return gelu(v[0]); }},
      {"cos", shapes({{2, 4}}, 2.0), [](Tape&, std::vector<Var>& v) { return cos(v[0]); }},
      {"sin", shapes({{2, 4}}, 2.0), [](Tape&, std::vector<Var>& v) { return sin(v[0]); }},
      {"square", shapes({{2, 4}}), [](Tape&, std::vector<Var>& v) { return square(v[0]); }},
      {"sum", shapes({{3, 4}}), [](Tape&, std::vector<Var>& v) { return sum(v[0]); }},
      {"mean", shapes({{3, 4}}), [](Tape&, std::vector<Var>& v) { return mean(v[0]); }},
      {"mean_rows", shapes({{3, 4}}), [](Tape&, std::vector<Var>& v) { return mean_rows(v[0]); }},
      {"smooth_l1", shapes({{1, 6}}, 1.5),
       [](Tape&, std::vector<Var>& v) { return smooth_l1(v[0], 1.0); }},
      {"huber", shapes({{1, 6}}, 1.0),
       [](Tape&, std::vector<Var>& v) { return huber(v[0], 0.5); }},
      {"hinge_squared", shapes({{1, 6}}, 2.0),
       [](Tape&, std::vector<Var>& v) { return hinge_squared(v[0], 1.0); }},
      {"dropout", shapes({{2, 5}}),
       [](Tape&, std::vector<Var>& v) {
         std::mt19937_64 mask_rng(5);  // same mask on every evaluation
         return dropout(v[0], 0.3, mask_rng);
       }},
      {"gru_step", shapes({{1, 4}, {1, 3}, {4, 7}, {1, 4}, {4, 7}, {1, 4}, {4, 7}, {1, 4}}),
       [](Tape&, std::vector<Var>& v) {
         return gru_step(v[0], v[1], GruWeights{v[2], v[3], v[4], v[5], v[6], v[7]});
       }},
  };
}

// Worst relative error over `instances` random draws of every primitive.
inline std::pair<double, std::string> worst_primitive_error(int instances = 100) {
  std::pair<double, std::string> worst{0.0, ""};
  for (const auto& pc : primitive_cases()) {
    std::mt19937_64 rng(42);
    for (int i = 0; i < instances; ++i) {
      const double e = primitive_max_error(pc.inputs(rng), pc.op, rng);
      if (e > worst.first) worst = {e, pc.name};
    }
  }
  return worst;
}

}  // namespace cmwm::testing
