#include <benchmark/benchmark.h>

#include <random>

#include "cmwm/cohort.hpp"
#include "cmwm/model.hpp"
#include "cmwm/objective.hpp"
#include "cmwm/rollout.hpp"

namespace {

using namespace cmwm;

Tensor random_tensor(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor t(r, c);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// A CKD-shaped cohort: 9 state features, 62 structured actions, 256-dim
// communication embedding, 6 time features, 52 static inputs.
Cohort ckd_cohort(std::size_t patients, std::size_t periods) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01(0.0, 1.0);
  std::bernoulli_distribution coin(0.2);
  Cohort c;
  for (std::size_t i = 0; i < patients; ++i) {
    PatientRecord p;
    p.patient_id = "p" + std::to_string(i);
    for (int k = 0; k < 52; ++k) p.static_raw.push_back(n01(rng));
    double egfr = 45.0 + 10.0 * n01(rng);
    for (std::size_t t = 0; t < periods; ++t) {
      PeriodRecord r;
      r.x.push_back(egfr);
      for (int k = 1; k < 9; ++k) r.x.push_back(n01(rng));
      for (int k = 0; k < 62; ++k) r.a_struct.push_back(coin(rng) ? 1.0 : 0.0);
      for (int k = 0; k < 256; ++k) r.a_comm.push_back(0.06 * n01(rng));
      for (int k = 0; k < 6; ++k) r.tau.push_back(static_cast<double>(t) + n01(rng));
      p.periods.push_back(std::move(r));
      egfr += -0.5 + 2.0 * n01(rng);
    }
    c.patients.push_back(std::move(p));
  }
  c.dims = validate_patient(c.patients.front());
  return c;
}

// Full dynamic-50 rollout of one 12-period patient with the CKD-sized model.
void BM_CkdRollout(benchmark::State& state) {
  const Cohort c = ckd_cohort(16, 12);
  const Standardizer st = fit_standardizer(c);
  const CmwmModel model = CmwmModel::init(ModelConfig::ckd());
  const ModelForecaster mf(model);
  const PatientRecord& p = c.patients.front();
  const std::size_t ctx = dynamic_context(p.length());
  for (auto _ : state) benchmark::DoNotOptimize(rollout(mf, st, p, ctx, RolloutConfig{}));
}
BENCHMARK(BM_CkdRollout)->Unit(benchmark::kMillisecond);

void BM_GruStepForwardBackward(benchmark::State& state) {
  const auto d_h = static_cast<std::size_t>(state.range(0));
  const std::size_t d_in = d_h;
  std::mt19937_64 rng(2);
  const Tensor h = random_tensor(1, d_h, rng), x = random_tensor(1, d_in, rng);
  const Tensor w1 = random_tensor(d_h, d_h + d_in, rng, 0.05), b = random_tensor(1, d_h, rng, 0.05);
  for (auto _ : state) {
    Tape tape;
    const Var out = gru_step(tape.variable(h), tape.variable(x),
                             GruWeights{tape.variable(w1), tape.variable(b), tape.variable(w1),
                                        tape.variable(b), tape.variable(w1), tape.variable(b)});
    tape.backward(sum(out));
    benchmark::DoNotOptimize(tape.grad(out));
  }
}
BENCHMARK(BM_GruStepForwardBackward)->Arg(32)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_Sigreg(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  const Tensor z = random_tensor(n, 128, rng);
  const LossWeights w;
  const Tensor dirs = sample_unit_directions(w.sigreg_projections, 128, rng);
  for (auto _ : state) {
    Tape tape;
    const Var zv = tape.variable(z);
    const Var loss = loss_sigreg(zv, dirs, w);
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(zv));
  }
}
BENCHMARK(BM_Sigreg)->Arg(64)->Arg(512)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
