#pragma once

// Closed-loop rollout, first-step anchoring, evaluation protocols, metrics
// and naive baselines. All reported values are in raw target units.

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cmwm/cohort.hpp"
#include "cmwm/model.hpp"

namespace cmwm {

enum class Protocol { dynamic50, fixed };

// Range applied to a prediction before it is written back into the next
// state's target slot.
struct FeedbackClip {
  bool enabled = true;
  double min = 1.0;
  double max = 200.0;

  friend bool operator==(const FeedbackClip&, const FeedbackClip&) = default;
};

struct RolloutConfig {
  Protocol protocol = Protocol::dynamic50;
  std::size_t fixed_context = 3;
  // Lower bound of the dynamic context and the smallest context accepted.
  std::size_t min_context = 3;
  bool anchor_enabled = false;
  double anchor_weight = 1.0;
  double anchor_jump_cap = 5.0;
  std::size_t trend_window = 3;
  FeedbackClip feedback;

  void validate() const;
};

// max(min_context, floor(T / 2))
std::size_t dynamic_context(std::size_t periods, std::size_t min_context = 3);
std::size_t context_for(const RolloutConfig& cfg, std::size_t periods);

// Standardised value written into the target slot for a standardised
// prediction. Unclipped predictions pass through unchanged.
double feedback_target_std(double y_hat_std, const Standardizer& st, const FeedbackClip& clip);
// Standardised next-period state: ground truth with the target slot replaced.
std::vector<double> feedback_state(const PeriodRecord& next_truth, double y_hat_std,
                                   const Standardizer& st, const FeedbackClip& clip);

// Blend the first prediction with a recent-trend extrapolation, then cap the
// jump from the last observed value. `history_raw` holds observed targets in
// time order (at least one).
double anchor_first_step(double y_hat1_raw, std::span<const double> history_raw,
                         const RolloutConfig& cfg);

class ForecastSession {
 public:
  virtual ~ForecastSession() = default;
  // Consume one period: standardised state plus that period's actions.
  virtual void observe(std::span<const double> x_std, const PeriodRecord& period) = 0;
  // Standardised target prediction for the next period.
  virtual double predict(std::span<const double> tau_std) = 0;
};

class Forecaster {
 public:
  virtual ~Forecaster() = default;
  virtual std::unique_ptr<ForecastSession> start(const PatientRecord& patient) const = 0;
  // Observed periods replayed before the first prediction.
  virtual std::size_t context_len() const = 0;
};

// Eval-mode wrapper around a trained model; thread-safe, one session per rollout.
class ModelForecaster final : public Forecaster {
 public:
  explicit ModelForecaster(const CmwmModel& model) : model_(model) {}
  std::unique_ptr<ForecastSession> start(const PatientRecord& patient) const override;
  std::size_t context_len() const override { return model_.config().context_len; }

 private:
  const CmwmModel& model_;
};

struct HorizonPoint {
  std::size_t period = 0;
  double y_hat = 0.0;
  double y_true = 0.0;
  double abs_error = 0.0;
};

struct RolloutResult {
  std::string patient_id;
  std::size_t context = 0;
  std::vector<HorizonPoint> points;
  bool anchored = false;
};

struct MetricSummary {
  std::size_t n = 0;
  double mae = 0.0;
  double rmse = 0.0;
};

// Warm up on the last min(c, context_len) observed periods, then predict
// periods c..T-1 feeding each prediction back into the next state's target
// slot. Future actions, tau and non-target state come from the record.
// Throws ValidationError unless min_context <= c < T.
RolloutResult rollout(const Forecaster& forecaster, const Standardizer& st,
                      const PatientRecord& patient, std::size_t context, const RolloutConfig& cfg);

RolloutResult baseline_carry_forward(const PatientRecord& patient, std::size_t context);
// Least-squares line through the c observed targets, extrapolated.
RolloutResult baseline_linear_trend(const PatientRecord& patient, std::size_t context);

// Throws ValidationError on an empty input.
MetricSummary metrics(std::span<const std::pair<double, double>> predicted_observed);
MetricSummary metrics(std::span<const RolloutResult> results);

struct EvaluationReport {
  MetricSummary summary;
  std::vector<RolloutResult> results;
  std::vector<std::string> skipped;  // patients with T <= c
};

using RolloutFn = std::function<RolloutResult(const PatientRecord&, std::size_t context)>;

// Runs `fn` for every patient with T > c and pools all horizon points.
// Results keep cohort order regardless of thread count.
EvaluationReport evaluate_protocol(const Cohort& cohort, const RolloutConfig& cfg,
                                   const RolloutFn& fn, std::size_t threads = 1);
EvaluationReport evaluate_protocol(const Forecaster& forecaster, const Standardizer& st,
                                   const Cohort& cohort, const RolloutConfig& cfg,
                                   std::size_t threads = 1);

nlohmann::json to_json(const MetricSummary& m);
nlohmann::json to_json(const RolloutResult& r);
nlohmann::json to_json(const EvaluationReport& r, bool include_results = true);
// patient_id,period,y_hat,y_true rows with a header line.
std::string to_csv(const EvaluationReport& r);

}  // namespace cmwm
