#include "cmwm/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cmwm/errors.hpp"

namespace cmwm {

void RolloutConfig::validate() const {
  if (!(anchor_weight >= 0.0 && anchor_weight <= 1.0)) {
    throw ValidationError("anchor_weight must lie in [0, 1]");
  }
  if (!(anchor_jump_cap > 0.0)) throw ValidationError("anchor_jump_cap must be > 0");
  if (trend_window < 1) throw ValidationError("trend_window must be >= 1");
  if (min_context < 1) throw ValidationError("min_context must be >= 1");
  if (protocol == Protocol::fixed && fixed_context < 1) {
    throw ValidationError("fixed_context must be >= 1");
  }
  if (feedback.enabled && !(feedback.min < feedback.max)) {
    throw ValidationError("feedback clip needs min < max");
  }
}

std::size_t dynamic_context(std::size_t periods, std::size_t min_context) {
  return std::max(min_context, periods / 2);
}

std::size_t context_for(const RolloutConfig& cfg, std::size_t periods) {
  return cfg.protocol == Protocol::dynamic50 ? dynamic_context(periods, cfg.min_context)
                                             : cfg.fixed_context;
}

double feedback_target_std(double y_hat_std, const Standardizer& st, const FeedbackClip& clip) {
  if (!clip.enabled) return y_hat_std;
  const double raw = st.target_to_raw(y_hat_std);
  if (raw >= clip.min && raw <= clip.max) return y_hat_std;
  return st.target_to_std(std::clamp(raw, clip.min, clip.max));
}

std::vector<double> feedback_state(const PeriodRecord& next_truth, double y_hat_std,
                                   const Standardizer& st, const FeedbackClip& clip) {
  std::vector<double> x = st.standardize_x(next_truth.x);
  x[kTargetSlot] = feedback_target_std(y_hat_std, st, clip);
  return x;
}

double anchor_first_step(double y_hat1_raw, std::span<const double> history_raw,
                         const RolloutConfig& cfg) {
  if (history_raw.empty()) throw ValidationError("anchoring needs at least one observed value");
  const double last = history_raw.back();
  const std::size_t changes =
      std::min(cfg.trend_window > 0 ? cfg.trend_window - 1 : 0, history_raw.size() - 1);
  double mean_change = 0.0;
  if (changes > 0) {
    const std::size_t n = history_raw.size();
    for (std::size_t i = n - changes; i < n; ++i) mean_change += history_raw[i] - history_raw[i - 1];
    mean_change /= static_cast<double>(changes);
  }
  const double trend = last + mean_change;
  const double blended = cfg.anchor_weight * trend + (1.0 - cfg.anchor_weight) * y_hat1_raw;
  const double step = blended - last;
  if (std::abs(step) <= cfg.anchor_jump_cap) return blended;
  return last + (step > 0 ? cfg.anchor_jump_cap : -cfg.anchor_jump_cap);
}

// ---------------------------------------------------------------- model sessions

namespace {

class ModelSession final : public ForecastSession {
 public:
  ModelSession(const CmwmModel& model, const PatientRecord& patient)
      : model_(model), h_(1, model.config().d_h) {
    Tape tape(false);
    ModelGraph g(model_, tape, Mode::eval);
    b_ = g.encode_static(patient.static_raw).value();
  }

  void observe(std::span<const double> x_std, const PeriodRecord& period) override {
    Tape tape(false);
    ModelGraph g(model_, tape, Mode::eval);
    const Var b = tape.constant(b_);
    const Var z = g.encode_state(tape.constant(Tensor::row(x_std)), b);
    const Var u = g.encode_action(period.a_struct, period.a_comm);
    h_ = g.transition(tape.constant(h_), z, u).value();
  }

  double predict(std::span<const double> tau_std) override {
    Tape tape(false);
    ModelGraph g(model_, tape, Mode::eval);
    return g.predict_head(tape.constant(h_), tape.constant(b_), tau_std).y_hat.item();
  }

 private:
  const CmwmModel& model_;
  Tensor b_;
  Tensor h_;
};

}  // namespace

std::unique_ptr<ForecastSession> ModelForecaster::start(const PatientRecord& patient) const {
  return std::make_unique<ModelSession>(model_, patient);
}

// ---------------------------------------------------------------- rollout

namespace {

void check_context(const PatientRecord& patient, std::size_t context, std::size_t min_context) {
  if (context < min_context || context >= patient.length()) {
    throw ValidationError("context " + std::to_string(context) + " out of range [" +
                          std::to_string(min_context) + ", " + std::to_string(patient.length()) +
                          ") for patient '" + patient.patient_id + "'");
  }
}

HorizonPoint point(std::size_t period, double y_hat, double y_true) {
  return {period, y_hat, y_true, std::abs(y_hat - y_true)};
}

}  // namespace

RolloutResult rollout(const Forecaster& forecaster, const Standardizer& st,
                      const PatientRecord& patient, std::size_t context, const RolloutConfig& cfg) {
  check_context(patient, context, cfg.min_context);
  const std::size_t T = patient.length();
  const std::size_t warm = std::min(context, forecaster.context_len());

  RolloutResult result;
  result.patient_id = patient.patient_id;
  result.context = context;
  result.anchored = cfg.anchor_enabled;

  auto session = forecaster.start(patient);
  for (std::size_t t = context - warm; t < context; ++t) {
    session->observe(st.standardize_x(patient.periods[t].x), patient.periods[t]);
  }

  std::vector<double> history;
  const std::size_t hist_from = context > cfg.trend_window ? context - cfg.trend_window : 0;
  for (std::size_t t = hist_from; t < context; ++t) history.push_back(patient.periods[t].y_raw());

  for (std::size_t t = context; t < T; ++t) {
    double y_std = session->predict(st.standardize_tau(patient.periods[t].tau));
    double y_raw = st.target_to_raw(y_std);
    if (t == context && cfg.anchor_enabled) {
      const double anchored = anchor_first_step(y_raw, history, cfg);
      // Leave y_std untouched when anchoring is a no-op so the feedback
      // path stays bit-identical to the unanchored rollout.
      if (anchored != y_raw) {
        y_raw = anchored;
        y_std = st.target_to_std(y_raw);
      }
    }
    result.points.push_back(point(t, y_raw, patient.periods[t].y_raw()));
    if (t + 1 < T) {
      session->observe(feedback_state(patient.periods[t], y_std, st, cfg.feedback),
                       patient.periods[t]);
    }
  }
  return result;
}

RolloutResult baseline_carry_forward(const PatientRecord& patient, std::size_t context) {
  check_context(patient, context, 1);
  RolloutResult r;
  r.patient_id = patient.patient_id;
  r.context = context;
  const double last = patient.periods[context - 1].y_raw();
  for (std::size_t t = context; t < patient.length(); ++t) {
    r.points.push_back(point(t, last, patient.periods[t].y_raw()));
  }
  return r;
}

RolloutResult baseline_linear_trend(const PatientRecord& patient, std::size_t context) {
  check_context(patient, context, 1);
  RolloutResult r;
  r.patient_id = patient.patient_id;
  r.context = context;
  const double n = static_cast<double>(context);
  double mean_t = 0.0, mean_y = 0.0;
  for (std::size_t t = 0; t < context; ++t) {
    mean_t += static_cast<double>(t);
    mean_y += patient.periods[t].y_raw();
  }
  mean_t /= n;
  mean_y /= n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t t = 0; t < context; ++t) {
    const double dt = static_cast<double>(t) - mean_t;
    sxy += dt * (patient.periods[t].y_raw() - mean_y);
    sxx += dt * dt;
  }
  const double slope = sxx > 0.0 ? sxy / sxx : 0.0;
  for (std::size_t t = context; t < patient.length(); ++t) {
    const double y_hat = mean_y + slope * (static_cast<double>(t) - mean_t);
    r.points.push_back(point(t, y_hat, patient.periods[t].y_raw()));
  }
  return r;
}

// ---------------------------------------------------------------- metrics

MetricSummary metrics(std::span<const std::pair<double, double>> pairs) {
  if (pairs.empty()) throw ValidationError("metrics of an empty set");
  double abs_sum = 0.0, sq_sum = 0.0;
  for (const auto& [pred, obs] : pairs) {
    const double e = pred - obs;
    abs_sum += std::abs(e);
    sq_sum += e * e;
  }
  const double n = static_cast<double>(pairs.size());
  return {pairs.size(), abs_sum / n, std::sqrt(sq_sum / n)};
}

MetricSummary metrics(std::span<const RolloutResult> results) {
  std::vector<std::pair<double, double>> pairs;
  for (const auto& r : results)
    for (const auto& p : r.points) pairs.emplace_back(p.y_hat, p.y_true);
  return metrics(pairs);
}

EvaluationReport evaluate_protocol(const Cohort& cohort, const RolloutConfig& cfg,
                                   const RolloutFn& fn, std::size_t threads) {
  cfg.validate();
  std::vector<const PatientRecord*> eligible;
  EvaluationReport report;
  for (const auto& p : cohort.patients) {
    if (p.length() > context_for(cfg, p.length())) {
      eligible.push_back(&p);
    } else {
      report.skipped.push_back(p.patient_id);
    }
  }
  report.results.resize(eligible.size());
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      report.results[i] = fn(*eligible[i], context_for(cfg, eligible[i]->length()));
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, eligible.size()));
  if (threads == 1) {
    work(0, eligible.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t per = (eligible.size() + threads - 1) / threads;
    for (std::size_t k = 0; k < threads; ++k) {
      const std::size_t begin = k * per, end = std::min(eligible.size(), begin + per);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
  }
  if (!report.results.empty()) report.summary = metrics(report.results);
  return report;
}

EvaluationReport evaluate_protocol(const Forecaster& forecaster, const Standardizer& st,
                                   const Cohort& cohort, const RolloutConfig& cfg,
                                   std::size_t threads) {
  return evaluate_protocol(
      cohort, cfg,
      [&](const PatientRecord& p, std::size_t c) { return rollout(forecaster, st, p, c, cfg); },
      threads);
}

// ---------------------------------------------------------------- serialisation

nlohmann::json to_json(const MetricSummary& m) {
  return {{"n", m.n}, {"mae", m.mae}, {"rmse", m.rmse}};
}

nlohmann::json to_json(const RolloutResult& r) {
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : r.points) {
    pts.push_back({{"period", p.period}, {"y_hat", p.y_hat}, {"y_true", p.y_true},
                   {"abs_error", p.abs_error}});
  }
  return {{"patient_id", r.patient_id}, {"context", r.context}, {"anchored", r.anchored},
          {"points", std::move(pts)}};
}

nlohmann::json to_json(const EvaluationReport& r, bool include_results) {
  nlohmann::json j = {{"summary", to_json(r.summary)}, {"skipped", r.skipped}};
  if (include_results) {
    nlohmann::json res = nlohmann::json::array();
    for (const auto& x : r.results) res.push_back(to_json(x));
    j["results"] = std::move(res);
  }
  return j;
}

std::string to_csv(const EvaluationReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "patient_id,period,y_hat,y_true\n";
  for (const auto& res : r.results)
    for (const auto& p : res.points)
      out << res.patient_id << ',' << p.period << ',' << p.y_hat << ',' << p.y_true << '\n';
  return out.str();
}

}  // namespace cmwm
