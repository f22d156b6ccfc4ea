#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "cmwm/errors.hpp"
#include "cmwm/pipeline.hpp"
#include "cmwm/trainer.hpp"
#include "support.hpp"

namespace cmwm {
namespace {

using testing::toy_cohort;
using testing::toy_config;

Cohort lengths_cohort(std::vector<std::size_t> lengths) {
  Cohort c;
  for (std::size_t T : lengths) {
    PatientRecord p;
    p.patient_id = "L" + std::to_string(c.patients.size());
    p.periods.resize(T);
    c.patients.push_back(p);
  }
  return c;
}

UnrollTrace unroll(const CmwmModel& m, const PatientRecord& p, PrefixSample s, const Standardizer& st,
                   Tape& tape, Mode mode = Mode::eval, std::uint64_t seed = 3) {
  std::mt19937_64 rng(seed);
  ModelGraph g(m, tape, mode, &rng);
  TrainConfig tc;
  return unroll_training_trajectory(g, p, s, st, LossWeights{}, tc);
}

// ---------------------------------------------------------------- prefixes

TEST(Prefixes, Enumeration) {
  TrainConfig tc;
  const auto five = enumerate_rollout_prefixes(lengths_cohort({5}), tc);
  ASSERT_EQ(five.size(), 2u);
  EXPECT_EQ(five[0], (PrefixSample{0, 3, 2}));
  EXPECT_EQ(five[1], (PrefixSample{0, 4, 1}));
  EXPECT_TRUE(enumerate_rollout_prefixes(lengths_cohort({3}), tc).empty());
  tc.max_horizon = 2;
  const auto many = enumerate_rollout_prefixes(lengths_cohort({3, 8, 4, 12}), tc);
  EXPECT_EQ(many.size(), 0u + 5u + 1u + 9u);
  for (const auto& s : many) EXPECT_LE(s.horizon, 2u);
}

TEST(Prefixes, ShuffleIsSeededPermutation) {
  const auto base = enumerate_rollout_prefixes(lengths_cohort({9, 9, 9}), TrainConfig{});
  auto a = base, b = base;
  std::mt19937_64 r1(4), r2(4);
  shuffle_samples(a, r1);
  shuffle_samples(b, r2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, base);
  std::sort(a.begin(), a.end(), [](auto& x, auto& y) {
    return std::tie(x.patient, x.context) < std::tie(y.patient, y.context);
  });
  EXPECT_EQ(a, base);
}

// ---------------------------------------------------------------- aggregation

TEST(Aggregation, Examples) {
  const std::vector<double> three{1, 1, 1}, two{0, 1}, mixed{4, 1, 7, 2};
  EXPECT_DOUBLE_EQ(aggregate_horizon_losses(three, 0.5), 1.0);
  EXPECT_NEAR(aggregate_horizon_losses(two, 0.5), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(aggregate_horizon_losses(mixed, 1.0), 3.5, 1e-15);
  EXPECT_THROW(aggregate_horizon_losses(std::vector<double>{}, 0.5), ValidationError);
}

TEST(Aggregation, VarMatchesPlain) {
  Tape tape;
  const std::vector<double> vals{0.3, 2.0, 1.1, 0.7};
  std::vector<Var> vars;
  for (double v : vals) vars.push_back(tape.constant(Tensor::scalar(v)));
  EXPECT_NEAR(aggregate_horizon_losses(vars, 0.7).item(), aggregate_horizon_losses(vals, 0.7), 1e-15);
}

// ---------------------------------------------------------------- optimizer

TEST(AdamW, ZeroGradientZeroDecayKeepsParams) {
  ParamStore ps;
  ps.add("w", Tensor::row({1.0, -2.0}));
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW opt(ps, cfg);
  opt.step(ps, {Tensor(1, 2)});
  EXPECT_EQ(ps[0], Tensor::row({1.0, -2.0}));
}

TEST(AdamW, FirstStepIsSignedLearningRate) {
  ParamStore ps;
  ps.add("w", Tensor::row({0.5, 0.5}));
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  cfg.grad_clip_norm = 0.0;
  AdamW opt(ps, cfg);
  opt.step(ps, {Tensor::row({0.3, -4.0})});
  EXPECT_NEAR(ps[0][0], 0.5 - cfg.lr * 0.3 / (0.3 + cfg.eps), 1e-16);
  EXPECT_NEAR(ps[0][1], 0.5 + cfg.lr * 4.0 / (4.0 + cfg.eps), 1e-16);
  EXPECT_NEAR(ps[0][0], 0.5 - cfg.lr, 1e-10);
}

TEST(AdamW, DecoupledDecay) {
  ParamStore ps;
  ps.add("w", Tensor::row({2.0, -3.0}));
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.01;
  AdamW opt(ps, cfg);
  opt.step(ps, {Tensor(1, 2)});
  EXPECT_NEAR(ps[0][0], 2.0 * (1.0 - 0.1 * 0.01), 1e-15);
  EXPECT_NEAR(ps[0][1], -3.0 * (1.0 - 0.1 * 0.01), 1e-15);
  EXPECT_EQ(opt.steps(), 1u);
}

TEST(AdamW, GlobalNormClipping) {
  std::vector<Tensor> g{Tensor::row({3.0}), Tensor::row({4.0})};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 1.0), 5.0);
  EXPECT_NEAR(global_norm(g), 1.0, 1e-15);
  EXPECT_NEAR(g[0][0], 0.6, 1e-15);
  std::vector<Tensor> small{Tensor::row({0.1})};
  clip_global_norm(small, 1.0);
  EXPECT_EQ(small[0][0], 0.1);
}

TEST(AdamW, RejectsMismatchedGradients) {
  ParamStore ps;
  ps.add("w", Tensor::row({1.0}));
  AdamW opt(ps, {});
  EXPECT_THROW(opt.step(ps, {Tensor::row({1.0, 2.0})}), ShapeError);
  AdamWConfig bad;
  bad.lr = 0.0;
  EXPECT_THROW(AdamW(ps, bad), ValidationError);
}

// ---------------------------------------------------------------- unroll

TEST(Unroll, HorizonOneIsTeacherForced) {
  const Cohort c = toy_cohort(1, 8);
  const Standardizer st = fit_standardizer(c);
  const CmwmModel m = CmwmModel::init(toy_config());
  Tape tape;
  const UnrollTrace t = unroll(m, c.patients[0], {0, 5, 1}, st, tape);
  ASSERT_EQ(t.steps.size(), 1u);
  ASSERT_EQ(t.inputs.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(t.inputs[i], st.standardize_x(c.patients[0].periods[i].x));
}

TEST(Unroll, TrueTargetFeedbackIsAFixedPoint) {
  const Cohort c = toy_cohort(2, 7);
  const Standardizer st = fit_standardizer(c);
  for (const auto& p : c.patients)
    for (const auto& r : p.periods)
      EXPECT_EQ(feedback_state(r, st.target_to_std(r.y_raw()), st, FeedbackClip{}), st.standardize_x(r.x));
}

TEST(Unroll, FutureTargetsOnlyMoveTheLosses) {
  const Cohort c = toy_cohort(3, 9, 13);
  const Standardizer st = fit_standardizer(c);
  const CmwmModel m = CmwmModel::init(toy_config());
  for (const auto& p : c.patients) {
    const PrefixSample s{0, 3, 6};
    PatientRecord moved = p;
    for (std::size_t t = s.context; t < p.length(); ++t) moved.periods[t].x[0] -= 11.0 + t;
    Tape ta, tb;
    const UnrollTrace a = unroll(m, p, s, st, ta, Mode::train);
    const UnrollTrace b = unroll(m, moved, s, st, tb, Mode::train);
    EXPECT_EQ(a.inputs, b.inputs);
    EXPECT_EQ(a.predictions_std, b.predictions_std);
    EXPECT_NE(a.steps.front().y, b.steps.front().y);
  }
}

TEST(Unroll, FedBackSlotHoldsPrediction) {
  const Cohort c = toy_cohort(1, 9);
  const Standardizer st = fit_standardizer(c);
  const CmwmModel m = CmwmModel::init(toy_config());
  Tape tape;
  const UnrollTrace t = unroll(m, c.patients[0], {0, 3, 4}, st, tape);
  ASSERT_EQ(t.inputs.size(), 3u + 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(t.inputs[3 + k][0], t.predictions_std[k]);
}

TEST(Unroll, PrefixMustFit) {
  const Cohort c = toy_cohort(1, 5);
  const Standardizer st = fit_standardizer(c);
  const CmwmModel m = CmwmModel::init(toy_config());
  Tape tape;
  EXPECT_THROW(unroll(m, c.patients[0], {0, 3, 3}, st, tape), ValidationError);
}

// ---------------------------------------------------------------- gradients

TEST(BatchObjective, GradientMatchesFiniteDifferences) {
  const testing::ObjectiveCheck chk = testing::full_objective_gradient_check();
  EXPECT_EQ(chk.grad.checked, chk.parameters);
  EXPECT_LT(chk.grad.max_rel_error, 1e-3) << chk.grad.worst;
  EXPECT_GT(chk.stats.terms.jump, 0.0);
  EXPECT_GT(chk.stats.terms.z, 0.0);
  EXPECT_EQ(chk.stats.steps, 9u);
}

TEST(BatchObjective, StatsRecombine) {
  const Cohort c = toy_cohort(3, 7);
  const Standardizer st = fit_standardizer(c);
  const CmwmModel m = CmwmModel::init(toy_config());
  Tape tape;
  std::mt19937_64 rng(1);
  ModelGraph g(m, tape, Mode::eval);
  BatchStats stats;
  const std::vector<PrefixSample> batch{{0, 3, 4}, {2, 4, 3}};
  const Var loss = batch_objective(g, c, batch, st, LossWeights{}, TrainConfig{}, rng, &stats);
  EXPECT_EQ(stats.loss, loss.item());
  EXPECT_EQ(stats.trajectories, 2u);
  EXPECT_EQ(stats.steps, 7u);
  EXPECT_EQ(stats.terms.total, total_loss(stats.terms, LossWeights{}).total);
}

// ---------------------------------------------------------------- fit

struct SmallData {
  PreparedData data;
  ModelConfig model;
};

SmallData small_synthetic(std::size_t n, std::vector<double> effects = {2.0, -2.0, 2.0, -2.0}) {
  SyntheticSpec spec;
  spec.n_patients = n;
  spec.action_effects = std::move(effects);
  const SyntheticCohort sc = generate_synthetic_cohort(spec);
  DataConfig dc;
  dc.split_seed = 1;
  SmallData s{prepare_data(sc.cohort, dc), {}};
  apply_cohort_dims(s.model, sc.cohort.dims);
  s.model.d_b = 8;
  s.model.d_z = 16;
  s.model.d_u = 16;
  s.model.d_h = 32;
  s.model.seed = 1;
  return s;
}

TEST(Fit, ZeroEpochsReturnsInitialParameters) {
  const SmallData s = small_synthetic(20);
  const CmwmModel init = CmwmModel::init(s.model);
  TrainConfig tc;
  tc.epochs = 0;
  const FitResult r = fit(init, s.data.splits.train, s.data.splits.val, s.data.standardizer, tc, {});
  EXPECT_EQ(r.best.params(), init.params());
  EXPECT_EQ(r.best_epoch, 0u);
  EXPECT_EQ(r.history.size(), 1u);
}

TEST(Fit, DeterministicAndBestMetricIsReproducible) {
  const SmallData s = small_synthetic(30);
  TrainConfig tc;
  tc.epochs = 3;
  tc.seed = 5;
  const auto& sp = s.data.splits;
  const FitResult a = fit(CmwmModel::init(s.model), sp.train, sp.val, s.data.standardizer, tc, {});
  const FitResult b = fit(CmwmModel::init(s.model), sp.train, sp.val, s.data.standardizer, tc, {});
  EXPECT_EQ(a.best.params(), b.best.params());
  ASSERT_EQ(a.history.size(), 4u);
  for (std::size_t e = 0; e < a.history.size(); ++e) EXPECT_EQ(a.history[e].loss, b.history[e].loss);

  const ModelForecaster f(a.best);
  const auto recomputed =
      evaluate_protocol(f, s.data.standardizer, sp.val, selection_rollout_config(tc)).summary;
  EXPECT_NEAR(recomputed.mae, a.best_validation.mae, 1e-9);
  EXPECT_EQ(a.history[a.best_epoch].validation.mae, a.best_validation.mae);
  for (const auto& h : a.history) EXPECT_GE(h.validation.mae, a.best_validation.mae);
}

TEST(Fit, NonFiniteLossAborts) {
  const SmallData s = small_synthetic(20);
  CmwmModel m = CmwmModel::init(s.model);
  m.params()[0][0] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig tc;
  tc.epochs = 1;
  const auto& sp = s.data.splits;
  try {
    fit(m, sp.train, sp.val, s.data.standardizer, tc, {});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("samples:"), std::string::npos);
  }
}

TEST(Fit, EpochLossFiniteAndFallingEarly) {
  const testing::SyntheticSetup setup = testing::acceptance_setup();
  const SyntheticCohort sc = generate_synthetic_cohort(setup.spec);
  RunConfig run = setup.run;
  run.train.epochs = 5;
  const TrainOutcome out = train_model(run, prepare_data(sc.cohort, run.data));
  const auto& h = out.fit.history;
  ASSERT_EQ(h.size(), 6u);
  for (std::size_t e = 1; e < h.size(); ++e) {
    EXPECT_TRUE(std::isfinite(h[e].loss));
    if (e > 1) {
      EXPECT_LT(h[e].loss, h[e - 1].loss) << "epoch " << e;
    }
  }
}

TEST(Fit, StrongEffectsCutValidationErrorByAThird) {
  const SmallData s = small_synthetic(50, {4.0, -4.0, 4.0, -4.0});
  TrainConfig tc;
  tc.epochs = 30;
  tc.seed = 1;
  const auto& sp = s.data.splits;
  const FitResult r = fit(CmwmModel::init(s.model), sp.train, sp.val, s.data.standardizer, tc, {});
  const double initial = r.history.front().validation.mae;
  EXPECT_LE(r.best_validation.mae, 0.7 * initial) << initial << " -> " << r.best_validation.mae;
}

}  // namespace
}  // namespace cmwm
