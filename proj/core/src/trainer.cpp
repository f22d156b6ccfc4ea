#include "cmwm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cmwm/errors.hpp"

namespace cmwm {

void TrainConfig::validate() const {
  optimizer.validate();
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (c_min < 1) throw ValidationError("c_min must be >= 1");
  if (max_horizon < 1) throw ValidationError("max_horizon must be >= 1");
  if (!(horizon_decay > 0.0 && horizon_decay <= 1.0)) {
    throw ValidationError("horizon_decay must lie in (0, 1]");
  }
  if (feedback.enabled && !(feedback.min < feedback.max)) {
    throw ValidationError("feedback clip needs min < max");
  }
}

std::vector<PrefixSample> enumerate_rollout_prefixes(const Cohort& cohort, const TrainConfig& cfg) {
  std::vector<PrefixSample> out;
  for (std::size_t i = 0; i < cohort.patients.size(); ++i) {
    const std::size_t T = cohort.patients[i].length();
    for (std::size_t c = cfg.c_min; c < T; ++c) {
      out.push_back({i, c, std::min(cfg.max_horizon, T - c)});
    }
  }
  return out;
}

void shuffle_samples(std::vector<PrefixSample>& samples, std::mt19937_64& rng) {
  // Explicit Fisher-Yates so the order does not depend on the standard
  // library's shuffle implementation.
  for (std::size_t i = samples.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(samples[i - 1], samples[j]);
  }
}

// ---------------------------------------------------------------- unroll

namespace {

// Target slot carries the prediction; a clipped prediction enters as a
// constant, so no gradient flows through the clamp.
Var fed_back_state(Tape& tape, const PeriodRecord& truth, Var y_hat_std, const Standardizer& st,
                   const FeedbackClip& clip) {
  std::vector<double> x = st.standardize_x(truth.x);
  const double y = y_hat_std.item();
  const double slot_value = feedback_target_std(y, st, clip);
  const Var slot = slot_value == y ? y_hat_std : tape.constant(Tensor::scalar(slot_value));
  static_assert(kTargetSlot == 0);
  if (x.size() == 1) return slot;
  const Var rest = tape.constant(Tensor::row(std::span<const double>(x).subspan(1)));
  return concat_cols({slot, rest});
}

Var scalar_const(Tape& tape, double v) { return tape.constant(Tensor::scalar(v)); }

}  // namespace

UnrollTrace unroll_training_trajectory(ModelGraph& graph, const PatientRecord& patient,
                                       const PrefixSample& sample, const Standardizer& st,
                                       const LossWeights& weights, const TrainConfig& cfg,
                                       const CmwmModel* latent_target) {
  const std::size_t T = patient.length();
  const std::size_t c = sample.context;
  if (c < 1 || sample.horizon < 1 || c + sample.horizon > T) {
    throw ValidationError("prefix (c=" + std::to_string(c) + ", h=" +
                          std::to_string(sample.horizon) + ") does not fit patient '" +
                          patient.patient_id + "' with " + std::to_string(T) + " periods");
  }
  Tape& tape = graph.tape();
  Tape target_tape(false);
  ModelGraph target_graph(latent_target != nullptr ? *latent_target : graph.model(), target_tape,
                          Mode::eval);
  const Var target_b = target_graph.encode_static(patient.static_raw);
  const double beta = weights.smooth_l1_beta;

  UnrollTrace trace;
  const Var b = graph.encode_static(patient.static_raw);
  Var h = graph.initial_hidden();

  const std::size_t warm = std::min(c, graph.model().config().context_len);
  for (std::size_t t = c - warm; t < c; ++t) {
    const auto x = st.standardize_x(patient.periods[t].x);
    trace.inputs.push_back(x);
    const Var z = graph.encode_state(tape.constant(Tensor::row(x)), b);
    trace.encoded_latents.push_back(z);
    const Var u = graph.encode_action(patient.periods[t].a_struct, patient.periods[t].a_comm);
    h = graph.transition(h, z, u);
  }

  for (std::size_t k = 0; k < sample.horizon; ++k) {
    const std::size_t t = c + k;
    const PeriodRecord& next = patient.periods[t];
    const HeadOutput out = graph.predict_head(h, b, st.standardize_tau(next.tau));
    trace.predictions_std.push_back(out.y_hat.item());
    trace.predicted_latents.push_back(out.z_hat);

    const double y_prev_raw = patient.periods[t - 1].y_raw();
    const double y_next_raw = next.y_raw();
    const Var y_prev = scalar_const(tape, st.target_to_std(y_prev_raw));
    const Var y_next = scalar_const(tape, st.target_to_std(y_next_raw));
    const Var z_target = tape.constant(
        target_graph.encode_state(target_tape.constant(Tensor::row(st.standardize_x(next.x))), target_b)
            .value());
    const Var y_hat_raw = add_scalar(scale(out.y_hat, st.target().std), st.target().mean);

    LossTerms terms;
    terms.y = loss_supervised(out.y_hat, y_next, beta);
    terms.z = loss_next_latent(out.z_hat, z_target);
    terms.sigreg = scalar_const(tape, 0.0);
    terms.slope = loss_slope(out.y_hat, y_prev, y_next, beta);
    terms.cont = loss_continuity(out.y_hat, y_prev, weights);
    terms.jump = loss_jump(y_hat_raw, scalar_const(tape, y_prev_raw), weights);
    trace.step_totals.push_back(total_loss(terms, weights));
    trace.steps.push_back(total_loss(LossBreakdown{terms.y.item(), terms.z.item(), 0.0,
                                                   terms.slope.item(), terms.cont.item(),
                                                   terms.jump.item(), 0.0},
                                     weights));

    if (k + 1 < sample.horizon) {
      const Var x_in = fed_back_state(tape, next, out.y_hat, st, cfg.feedback);
      trace.inputs.emplace_back(x_in.value().values().begin(), x_in.value().values().end());
      const Var z = graph.encode_state(x_in, b);
      trace.encoded_latents.push_back(z);
      h = graph.transition(h, z, graph.encode_action(next.a_struct, next.a_comm));
    }
  }
  return trace;
}

double aggregate_horizon_losses(std::span<const double> totals, double gamma) {
  if (totals.empty()) throw ValidationError("aggregate_horizon_losses: empty trajectory");
  double weighted = 0.0, norm = 0.0, w = 1.0;
  for (double v : totals) {
    weighted += w * v;
    norm += w;
    w *= gamma;
  }
  return weighted / norm;
}

Var aggregate_horizon_losses(std::span<const Var> totals, double gamma) {
  if (totals.empty()) throw ValidationError("aggregate_horizon_losses: empty trajectory");
  Var acc = totals[0];
  double norm = 1.0, w = 1.0;
  for (std::size_t k = 1; k < totals.size(); ++k) {
    w *= gamma;
    acc = add(acc, scale(totals[k], w));
    norm += w;
  }
  return scale(acc, 1.0 / norm);
}

// ---------------------------------------------------------------- batch

Var batch_objective(ModelGraph& graph, const Cohort& cohort, std::span<const PrefixSample> batch,
                    const Standardizer& st, const LossWeights& weights, const TrainConfig& cfg,
                    std::mt19937_64& rng, BatchStats* stats, const CmwmModel* latent_target) {
  if (batch.empty()) throw ValidationError("batch_objective: empty batch");
  Var data;
  std::vector<Var> latents;
  LossBreakdown sums;
  std::size_t steps = 0;
  for (const auto& s : batch) {
    if (s.patient >= cohort.patients.size()) throw ValidationError("prefix sample out of range");
    UnrollTrace trace =
        unroll_training_trajectory(graph, cohort.patients[s.patient], s, st, weights, cfg,
                                   latent_target);
    const Var agg = aggregate_horizon_losses(trace.step_totals, cfg.horizon_decay);
    data = data.valid() ? add(data, agg) : agg;
    latents.insert(latents.end(), trace.encoded_latents.begin(), trace.encoded_latents.end());
    if (weights.sigreg_include_predicted) {
      latents.insert(latents.end(), trace.predicted_latents.begin(), trace.predicted_latents.end());
    }
    for (const auto& b : trace.steps) {
      sums.y += b.y;
      sums.z += b.z;
      sums.slope += b.slope;
      sums.cont += b.cont;
      sums.jump += b.jump;
    }
    steps += trace.steps.size();
  }
  data = scale(data, 1.0 / static_cast<double>(batch.size()));
  const Var sig = loss_sigreg(concat_rows(latents), rng, weights);
  const Var loss = add(data, scale(sig, weights.lambda_sig));
  if (stats != nullptr) {
    const double n = static_cast<double>(steps);
    LossBreakdown mean{sums.y / n, sums.z / n, sig.item(), sums.slope / n,
                       sums.cont / n, sums.jump / n, 0.0};
    stats->terms = total_loss(mean, weights);
    stats->loss = loss.item();
    stats->trajectories = batch.size();
    stats->steps = steps;
  }
  return loss;
}

// ---------------------------------------------------------------- fit

RolloutConfig selection_rollout_config(const TrainConfig& cfg) {
  RolloutConfig r;
  r.protocol = Protocol::dynamic50;
  r.min_context = cfg.c_min;
  r.anchor_enabled = cfg.selection_anchor;
  r.feedback = cfg.feedback;
  return r;
}

namespace {

std::string describe_batch(const Cohort& cohort, std::span<const PrefixSample> batch,
                           const BatchStats& stats) {
  std::ostringstream out;
  out << "loss=" << stats.loss << " y=" << stats.terms.y << " z=" << stats.terms.z
      << " sigreg=" << stats.terms.sigreg << " slope=" << stats.terms.slope
      << " cont=" << stats.terms.cont << " jump=" << stats.terms.jump << "; samples:";
  for (const auto& s : batch) {
    out << ' ' << cohort.patients[s.patient].patient_id << "(c=" << s.context
        << ",h=" << s.horizon << ')';
  }
  return out.str();
}

MetricSummary validate_model(const CmwmModel& model, const Cohort& val, const Standardizer& st,
                             const TrainConfig& cfg) {
  const ModelForecaster forecaster(model);
  const auto report =
      evaluate_protocol(forecaster, st, val, selection_rollout_config(cfg), cfg.threads);
  if (report.results.empty()) {
    throw ValidationError("validation split has no patient longer than its rollout context");
  }
  return report.summary;
}

}  // namespace

FitResult fit(CmwmModel model, const Cohort& train, const Cohort& val, const Standardizer& st,
              const TrainConfig& cfg, const LossWeights& weights, const EpochCallback& on_epoch) {
  cfg.validate();
  weights.validate();
  using clock = std::chrono::steady_clock;

  std::vector<PrefixSample> samples = enumerate_rollout_prefixes(train, cfg);
  if (cfg.epochs > 0 && samples.empty()) {
    throw ValidationError("training split has no patient with more than c_min periods");
  }
  std::mt19937_64 order_rng(cfg.seed);
  std::mt19937_64 noise_rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
  AdamW optimizer(model.params(), cfg.optimizer);

  EpochRecord initial;
  const auto t0 = clock::now();
  initial.validation = validate_model(model, val, st, cfg);
  initial.seconds = std::chrono::duration<double>(clock::now() - t0).count();
  FitResult result{model, 0, initial.validation, {initial}};
  if (on_epoch) on_epoch(initial);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = clock::now();
    shuffle_samples(samples, order_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin < samples.size(); begin += cfg.batch_size) {
      const std::span<const PrefixSample> batch(
          samples.data() + begin, std::min(cfg.batch_size, samples.size() - begin));
      BatchStats stats;
      std::vector<Tensor> grads;
      {
        Tape tape;
        ModelGraph graph(model, tape, Mode::train, &noise_rng);
        const Var loss = batch_objective(graph, train, batch, st, weights, cfg, noise_rng, &stats);
        if (!std::isfinite(stats.loss)) {
          throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) +
                             ": " + describe_batch(train, batch, stats));
        }
        tape.backward(loss);
        grads = tape.param_grads();
      }
      for (std::size_t i = 0; i < grads.size(); ++i) {
        if (!grads[i].all_finite()) {
          throw NumericError("non-finite gradient for '" + model.params().name(i) +
                             "' at epoch " + std::to_string(epoch) + ": " +
                             describe_batch(train, batch, stats));
        }
      }
      rec.grad_norm += optimizer.step(model.params(), std::move(grads));
      const double n = static_cast<double>(batch.size());
      rec.loss += stats.loss * n;
      rec.terms.y += stats.terms.y * n;
      rec.terms.z += stats.terms.z * n;
      rec.terms.sigreg += stats.terms.sigreg * n;
      rec.terms.slope += stats.terms.slope * n;
      rec.terms.cont += stats.terms.cont * n;
      rec.terms.jump += stats.terms.jump * n;
      rec.samples += batch.size();
      ++batches;
    }
    const double n = static_cast<double>(rec.samples);
    rec.loss /= n;
    rec.terms = total_loss(LossBreakdown{rec.terms.y / n, rec.terms.z / n, rec.terms.sigreg / n,
                                         rec.terms.slope / n, rec.terms.cont / n,
                                         rec.terms.jump / n, 0.0},
                           weights);
    rec.grad_norm /= static_cast<double>(batches);
    rec.validation = validate_model(model, val, st, cfg);
    rec.seconds = std::chrono::duration<double>(clock::now() - start).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.validation.mae < result.best_validation.mae) {
      result.best = model;
      result.best_epoch = epoch;
      result.best_validation = rec.validation;
    }
  }
  return result;
}

nlohmann::json to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"loss", r.loss},
          {"terms",
           {{"y", r.terms.y},
            {"z", r.terms.z},
            {"sigreg", r.terms.sigreg},
            {"slope", r.terms.slope},
            {"cont", r.terms.cont},
            {"jump", r.terms.jump},
            {"total", r.terms.total}}},
          {"grad_norm", r.grad_norm},
          {"val_mae", r.validation.mae},
          {"val_rmse", r.validation.rmse},
          {"val_points", r.validation.n},
          {"samples", r.samples},
          {"seconds", r.seconds}};
}

}  // namespace cmwm
