#pragma once

// Fixtures shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "cmwm/cohort.hpp"
#include "cmwm/config.hpp"
#include "cmwm/model.hpp"
#include "cmwm/objective.hpp"
#include "cmwm/pipeline.hpp"
#include "cmwm/synthetic.hpp"
#include "cmwm/trainer.hpp"

namespace cmwm::testing {

// d_x=4, d_h=8, d_z=6 with small everything else.
inline ModelConfig toy_config(std::uint64_t seed = 3) {
  ModelConfig c;
  c.d_x = 4;
  c.d_a_struct = 3;
  c.d_a_comm = 4;
  c.d_tau = 2;
  c.d_static_in = 3;
  c.d_b = 4;
  c.d_z = 6;
  c.d_u = 5;
  c.d_h = 8;
  c.dropout = 0.05;
  c.context_len = 6;
  c.seed = seed;
  return c;
}

// Random cohort matching toy_config: target near 50 with a drifting walk,
// binary structured actions, gaussian communication vectors.
inline Cohort toy_cohort(std::size_t patients, std::size_t periods, std::uint64_t seed = 11) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::bernoulli_distribution coin(0.5);
  Cohort c;
  for (std::size_t i = 0; i < patients; ++i) {
    PatientRecord p;
    p.patient_id = "toy" + std::to_string(i);
    p.static_raw = {coin(rng) ? 1.0 : 0.0, n01(rng), 1.0};
    double y = 50.0 + 8.0 * n01(rng);
    for (std::size_t t = 0; t < periods; ++t) {
      PeriodRecord r;
      r.x = {y, 60.0 + n01(rng), n01(rng), static_cast<double>(t)};
      r.a_struct = {coin(rng) ? 1.0 : 0.0, coin(rng) ? 1.0 : 0.0, coin(rng) ? 1.0 : 0.0};
      r.a_comm = {n01(rng), n01(rng), n01(rng), n01(rng)};
      r.tau = {static_cast<double>(t) + 0.3 * n01(rng), 1.0 + 0.1 * n01(rng)};
      r.comm_volume = {2.0, 300.0, 1.0};
      p.periods.push_back(std::move(r));
      y += -1.0 + 3.0 * n01(rng);
    }
    c.patients.push_back(std::move(p));
  }
  c.dims = validate_patient(c.patients.front());
  return c;
}

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true
// gradient is numerically zero from dominating through roundoff.
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), floor});
}

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// Central differences of f over every entry of every tensor in `params`,
// compared with `analytic` (aligned with the store).
inline GradCheck check_param_grads(ParamStore& params, const std::vector<Tensor>& analytic,
                                   const std::function<double()>& f, double h = 1e-5) {
  GradCheck out;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& t = params[i];
    for (std::size_t k = 0; k < t.size(); ++k) {
      const double saved = t[k];
      t[k] = saved + h;
      const double up = f();
      t[k] = saved - h;
      const double down = f();
      t[k] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = rel_error(analytic[i][k], numeric);
      ++out.checked;
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = params.name(i) + "[" + std::to_string(k) + "]";
      }
    }
  }
  return out;
}

struct ObjectiveCheck {
  GradCheck grad;
  BatchStats stats;
  std::size_t parameters = 0;
};

// Gradient of the full minibatch objective (six terms, horizon aggregation,
// feedback, dropout) against central differences on the toy config: three
// trajectories of horizon 3. delta_j is lowered so the jump hinge is active.
// The next-latent target is stop-gradient, so the differences are taken with
// it frozen at the unperturbed parameters.
inline ObjectiveCheck full_objective_gradient_check() {
  CmwmModel model = CmwmModel::init(toy_config());
  const Cohort cohort = toy_cohort(3, 6);
  const Standardizer st = fit_standardizer(cohort);
  LossWeights w;
  w.delta_j = 2.0;
  w.sigreg_projections = 8;
  TrainConfig tc;
  tc.max_horizon = 3;
  const std::vector<PrefixSample> batch{{0, 3, 3}, {1, 3, 3}, {2, 3, 3}};

  const CmwmModel frozen = model;
  ObjectiveCheck out;
  auto evaluate = [&](std::vector<Tensor>* grads) {
    // Fresh streams per evaluation: identical dropout masks and projections.
    std::mt19937_64 rng(7);
    Tape tape;
    ModelGraph g(model, tape, Mode::train, &rng);
    const Var loss = batch_objective(g, cohort, batch, st, w, tc, rng,
                                     grads != nullptr ? &out.stats : nullptr, &frozen);
    if (grads != nullptr) {
      tape.backward(loss);
      *grads = tape.param_grads();
    }
    return loss.item();
  };
  std::vector<Tensor> analytic;
  evaluate(&analytic);
  out.grad = check_param_grads(model.params(), analytic, [&] { return evaluate(nullptr); });
  out.parameters = model.parameter_count();
  return out;
}

// The pinned synthetic setup behind the convergence and ablation criteria.
struct SyntheticSetup {
  SyntheticSpec spec;
  RunConfig run;
};

inline SyntheticSetup acceptance_setup() {
  SyntheticSetup s;
  s.spec.n_patients = 200;
  s.spec.min_periods = 5;
  s.spec.max_periods = 10;
  s.spec.action_effects = {2.0, -2.0, 2.0, -2.0};
  s.spec.noise_std = 2.0;
  s.spec.seed = 7;

  RunConfig& r = s.run;
  r.data.split_seed = 1;
  r.model.d_b = 8;
  r.model.d_z = 16;
  r.model.d_u = 16;
  r.model.d_h = 32;
  r.model.seed = 1;
  r.train.epochs = 30;
  r.train.batch_size = 16;
  r.train.seed = 1;
  r.train.optimizer.lr = 6e-4;
  return s;
}

}  // namespace cmwm::testing
