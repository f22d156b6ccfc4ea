// Acceptance runner: one PASS/FAIL line per criterion with the measured
// value and the pinned tolerance. Exit status is the number of failures.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>

#include "cmwm/checkpoint.hpp"
#include "cmwm/objective.hpp"
#include "cmwm/pipeline.hpp"
#include "cmwm/rollout.hpp"
#include "primitive_cases.hpp"
#include "support.hpp"

namespace {

using namespace cmwm;

int failures = 0;

void report(int id, const char* name, bool pass, const std::string& detail) {
  std::printf("[%s] %d %s: %s\n", pass ? "PASS" : "FAIL", id, name, detail.c_str());
  std::fflush(stdout);
  failures += pass ? 0 : 1;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Var scalar(Tape& tape, double v) { return tape.constant(Tensor::scalar(v)); }

// ------------------------------------------------------------------ 1
void gradient_correctness() {
  constexpr double kFullTol = 1e-3, kPrimTol = 1e-4, kSeconds = 60.0;
  const auto t0 = std::chrono::steady_clock::now();
  const testing::ObjectiveCheck full = testing::full_objective_gradient_check();
  const auto [prim, prim_name] = testing::worst_primitive_error(100);
  const double secs = seconds_since(t0);
  const bool active = full.stats.terms.jump > 0.0 && full.stats.terms.z > 0.0;
  report(1, "gradient correctness",
         full.grad.max_rel_error < kFullTol && prim < kPrimTol && secs < kSeconds && active,
         fmt("full rel %.2e (<1e-3) over %.0f entries, primitives %.2e (<1e-4), %.1fs (<60s)",
             full.grad.max_rel_error, static_cast<double>(full.grad.checked), prim, secs) +
             " worst " + full.grad.worst + "/" + prim_name);
}

// ------------------------------------------------------------------ 2
void sigreg_fidelity() {
  const LossWeights w;
  std::mt19937_64 rng(2024);
  const std::size_t n = 4096, d = 16;
  const Tensor dirs = sample_unit_directions(w.sigreg_projections, d, rng);
  Tape tape(false);
  const double collapsed = loss_sigreg(tape.constant(Tensor(n, d)), dirs, w).item();

  // Every projection of the zero batch is 0: C = 1, S = 0 at every knot.
  const double dt = w.sigreg_t_max / static_cast<double>(w.sigreg_knots - 1);
  double scalar_ref = 0.0;
  for (std::size_t k = 0; k < w.sigreg_knots; ++k) {
    const double t = dt * static_cast<double>(k);
    const double trap = (k == 0 || k + 1 == w.sigreg_knots) ? dt / 2.0 : dt;
    const double g = std::exp(-t * t / 2.0);
    scalar_ref += trap * g * (1.0 - g) * (1.0 - g);
  }
  scalar_ref *= static_cast<double>(n);

  std::normal_distribution<double> n01(0.0, 1.0);
  std::mt19937_64 zrng(17);
  Tensor z(n, d);
  for (auto& v : z.values()) v = n01(zrng);
  const double gaussian = loss_sigreg(tape.constant(z), dirs, w).item();
  const double err = std::abs(collapsed - scalar_ref);
  report(2, "SIGReg fidelity", err <= 1e-12 && collapsed >= 10.0 * gaussian,
         fmt("zero batch |lib-scalar| %.2e (<=1e-12); collapsed/gaussian %.1f (>=10)", err,
             collapsed / gaussian));
}

// ------------------------------------------------------------------ 3
void loss_closed_forms() {
  Tape tape(false);
  const LossWeights w;
  double worst = 0.0;
  auto check = [&](double got, double want) { worst = std::max(worst, std::abs(got - want)); };
  check(loss_supervised(scalar(tape, 3.0), scalar(tape, 1.0)).item(), 1.5);
  check(loss_supervised(scalar(tape, 0.5), scalar(tape, 0.0)).item(), 0.125);
  check(loss_slope(scalar(tape, 2.0), scalar(tape, 0.0), scalar(tape, 1.0)).item(), 0.5);
  check(loss_continuity(scalar(tape, 1.3), scalar(tape, 1.0), w).item(), 0.045);
  check(loss_continuity(scalar(tape, 3.0), scalar(tape, 1.0), w).item(), 0.875);
  check(loss_jump(scalar(tape, 62.0), scalar(tape, 50.0), w).item(), 4.0);
  check(loss_jump(scalar(tape, 35.0), scalar(tape, 50.0), w).item(), 25.0);
  check(total_loss(LossBreakdown{1, 1, 1, 1, 1, 1, 0}, w).total, 1.788);
  double band = 0.0;
  for (double step = -10.0; step <= 10.0; step += 0.0625) {
    band = std::max(band, loss_jump(scalar(tape, 50.0 + step), scalar(tape, 50.0), w).item());
  }
  report(3, "loss closed forms", worst <= 1e-12 && band == 0.0,
         fmt("max |err| %.2e (<=1e-12); max jump loss for |step|<=10: %g (==0)", worst, band));
}

// ------------------------------------------------------------------ 4
void no_leak() {
  const Cohort c = testing::toy_cohort(8, 10, 21);
  const Standardizer st = fit_standardizer(c);
  const CmwmModel model = CmwmModel::init(testing::toy_config());
  const ModelForecaster mf(model);
  std::size_t compared = 0, differing = 0;
  for (const auto& p : c.patients) {
    const std::size_t ctx = dynamic_context(p.length());
    PatientRecord perturbed = p;
    for (std::size_t t = ctx; t < p.length(); ++t) perturbed.periods[t].x[0] += 37.0 * (t + 1);
    const RolloutResult a = rollout(mf, st, p, ctx, RolloutConfig{});
    const RolloutResult b = rollout(mf, st, perturbed, ctx, RolloutConfig{});
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      ++compared;
      differing += a.points[i].y_hat != b.points[i].y_hat;
    }
  }
  report(4, "no leak", compared > 0 && differing == 0,
         fmt("%.0f of %.0f predictions changed when future targets were perturbed (==0)",
             static_cast<double>(differing), static_cast<double>(compared)));
}

// ------------------------------------------------------------------ 5
void dynamic_protocol() {
  bool ok = true;
  std::ostringstream detail;
  RolloutConfig cfg;
  for (std::size_t T = 5; T <= 12; ++T) {
    const std::size_t want = std::max<std::size_t>(3, T / 2);
    const Cohort one = testing::toy_cohort(1, T, 100 + T);
    const EvaluationReport r = evaluate_protocol(
        one, cfg, [](const PatientRecord& p, std::size_t ctx) { return baseline_carry_forward(p, ctx); });
    const std::size_t ctx = r.results.empty() ? 0 : r.results[0].context;
    const std::size_t horizons = r.results.empty() ? 0 : r.results[0].points.size();
    const bool row = dynamic_context(T) == want && ctx == want && horizons == T - want;
    ok = ok && row;
    detail << "T" << T << ":c" << ctx << "/h" << horizons << (row ? " " : "! ");
  }
  report(5, "dynamic-50 protocol", ok, detail.str() + "(c=max(3,floor(T/2)), h=T-c)");
}

// ------------------------------------------------------------------ 6-8
struct Trained {
  Checkpoint checkpoint;
  SplitEvaluation eval;
};

Trained train_variant(const testing::SyntheticSetup& setup, const Cohort& cohort, CommVariant v) {
  const PreparedData data = prepare_data(apply_comm_variant(cohort, v), setup.run.data);
  Checkpoint ckpt = train_model(setup.run, data).checkpoint;
  SplitEvaluation eval = evaluate_split(ckpt, data.splits.test, setup.run.rollout);
  return {std::move(ckpt), std::move(eval)};
}

void anchoring(const Checkpoint& ckpt, const Cohort& test) {
  const ModelForecaster mf(ckpt.model);
  RolloutConfig capped;
  capped.anchor_enabled = true;
  capped.anchor_weight = 1.0;
  capped.anchor_jump_cap = 5.0;
  RolloutConfig noop = capped;
  noop.anchor_weight = 0.0;
  noop.anchor_jump_cap = 1e12;
  double worst_jump = 0.0;
  std::size_t patients = 0, mismatches = 0;
  for (const auto& p : test.patients) {
    const std::size_t ctx = dynamic_context(p.length());
    if (p.length() <= ctx) continue;
    ++patients;
    const RolloutResult a = rollout(mf, ckpt.standardizer, p, ctx, capped);
    worst_jump = std::max(worst_jump, std::abs(a.points[0].y_hat - p.periods[ctx - 1].y_raw()));
    const RolloutResult plain = rollout(mf, ckpt.standardizer, p, ctx, RolloutConfig{});
    const RolloutResult zero = rollout(mf, ckpt.standardizer, p, ctx, noop);
    for (std::size_t i = 0; i < plain.points.size(); ++i) {
      mismatches += plain.points[i].y_hat != zero.points[i].y_hat;
    }
  }
  report(6, "anchoring", patients > 0 && worst_jump <= 5.0 + 1e-9 && mismatches == 0,
         fmt("max |y1-y_last| %.4f (<=5) over %.0f test patients; alpha=0 mismatches %.0f (==0)",
             worst_jump, static_cast<double>(patients), static_cast<double>(mismatches)));
}

void synthetic_and_ablation() {
  const testing::SyntheticSetup setup = testing::acceptance_setup();
  const SyntheticCohort synthetic = generate_synthetic_cohort(setup.spec);

  const auto t0 = std::chrono::steady_clock::now();
  const Trained full = train_variant(setup, synthetic.cohort, CommVariant::full);
  const double mae = full.eval.model.summary.mae;
  const double carry = full.eval.carry_forward.summary.mae;
  const double trend = full.eval.linear_trend.summary.mae;
  const double secs = seconds_since(t0);

  const PreparedData data = prepare_data(synthetic.cohort, setup.run.data);
  anchoring(full.checkpoint, data.splits.test);
  report(7, "synthetic convergence", mae < carry && mae <= 0.9 * trend,
         fmt("test MAE %.4f; carry-forward %.4f (strictly above); linear-trend %.4f (>= MAE/0.9); "
             "%.0fs",
             mae, carry, trend, secs));

  const double intensity =
      train_variant(setup, synthetic.cohort, CommVariant::intensity).eval.model.summary.mae;
  const double none = train_variant(setup, synthetic.cohort, CommVariant::none).eval.model.summary.mae;
  constexpr double kGap = 1.03;
  report(8, "communication ablation", none >= kGap * mae && intensity >= kGap * mae,
         fmt("full %.4f, intensity %.4f (x%.3f), none %.4f", mae, intensity, intensity / mae, none) +
             fmt(" (x%.3f); both >= x1.03", none / mae));
}

// ------------------------------------------------------------------ 9
std::string checkpoint_bytes(const Checkpoint& c) {
  std::ostringstream out(std::ios::binary);
  write_checkpoint(out, c);
  return out.str();
}

void determinism() {
  testing::SyntheticSetup setup = testing::acceptance_setup();
  setup.spec.n_patients = 40;
  setup.run.train.epochs = 3;
  const SyntheticCohort synthetic = generate_synthetic_cohort(setup.spec);
  const PreparedData data = prepare_data(synthetic.cohort, setup.run.data);
  const std::string first = checkpoint_bytes(train_model(setup.run, data).checkpoint);
  const std::string second = checkpoint_bytes(train_model(setup.run, data).checkpoint);

  std::istringstream in(first, std::ios::binary);
  const std::string reloaded = checkpoint_bytes(read_checkpoint(in));

  const double count = static_cast<double>(CmwmModel::init(ModelConfig::ckd()).parameter_count());
  const double dev = count / 790081.0 - 1.0;
  report(9, "determinism", first == second && reloaded == first && std::abs(dev) <= 0.05,
         std::string("same-seed bytes ") + (first == second ? "identical" : "DIFFER") +
             ", save/load " + (reloaded == first ? "exact" : "INEXACT") +
             fmt(", CKD params %.0f (%+.2f%% of 790081, within 5%%)", count, 100.0 * dev));
}

}  // namespace

int main() {
  gradient_correctness();
  sigreg_fidelity();
  loss_closed_forms();
  no_leak();
  dynamic_protocol();
  synthetic_and_ablation();
  determinism();
  std::printf("%d failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
