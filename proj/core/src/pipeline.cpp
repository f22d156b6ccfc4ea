#include "cmwm/pipeline.hpp"

#include <cmath>

#include "cmwm/errors.hpp"

namespace cmwm {

std::string to_string(CommVariant v) {
  switch (v) {
    case CommVariant::full: return "full";
    case CommVariant::intensity: return "intensity";
    case CommVariant::none: return "none";
  }
  return "full";
}

CommVariant comm_variant_from_string(std::string_view name) {
  if (name == "full") return CommVariant::full;
  if (name == "intensity") return CommVariant::intensity;
  if (name == "none") return CommVariant::none;
  throw ValidationError("unknown communication variant '" + std::string(name) +
                        "' (expected full, intensity or none)");
}

Cohort apply_comm_variant(const Cohort& cohort, CommVariant variant) {
  Cohort out = cohort;
  if (variant == CommVariant::full) return out;
  for (auto& p : out.patients) {
    for (auto& r : p.periods) {
      if (variant == CommVariant::none) {
        std::fill(r.a_comm.begin(), r.a_comm.end(), 0.0);
        continue;
      }
      if (r.comm_volume.empty()) {
        throw ValidationError("intensity variant needs comm_volume on every period (patient '" +
                              p.patient_id + "')");
      }
      r.a_comm.resize(r.comm_volume.size());
      for (std::size_t j = 0; j < r.comm_volume.size(); ++j) {
        r.a_comm[j] = std::log1p(std::max(0.0, r.comm_volume[j]));
      }
    }
  }
  if (variant == CommVariant::intensity) out.dims.d_a_comm = out.dims.d_comm_volume;
  return out;
}

PreparedData prepare_data(const Cohort& cohort, const DataConfig& cfg) {
  PreparedData d;
  d.splits = split_patients(cohort, cfg.split, cfg.split_seed);
  if (d.splits.train.patients.empty()) throw ValidationError("training split is empty");
  d.standardizer = fit_standardizer(d.splits.train, &d.warnings);
  return d;
}

TrainOutcome train_model(const RunConfig& cfg, const PreparedData& data,
                         const EpochCallback& on_epoch) {
  RunConfig resolved = cfg;
  apply_cohort_dims(resolved.model, data.splits.train.dims);
  resolved.model.validate();
  FitResult fit_result = fit(CmwmModel::init(resolved.model), data.splits.train, data.splits.val,
                             data.standardizer, resolved.train, resolved.loss, on_epoch);
  Checkpoint ckpt{fit_result.best,
                  data.standardizer,
                  resolved.loss,
                  resolved.train,
                  fit_result.best_epoch,
                  fit_result.best_validation,
                  to_json(resolved)};
  return {std::move(ckpt), std::move(fit_result)};
}

SplitEvaluation evaluate_split(const Checkpoint& ckpt, const Cohort& split,
                               const RolloutConfig& cfg, std::size_t threads) {
  const ModelForecaster forecaster(ckpt.model);
  SplitEvaluation e;
  e.model = evaluate_protocol(forecaster, ckpt.standardizer, split, cfg, threads);
  e.carry_forward = evaluate_protocol(
      split, cfg, [](const PatientRecord& p, std::size_t c) { return baseline_carry_forward(p, c); },
      threads);
  e.linear_trend = evaluate_protocol(
      split, cfg, [](const PatientRecord& p, std::size_t c) { return baseline_linear_trend(p, c); },
      threads);
  return e;
}

nlohmann::json to_json(const SplitEvaluation& e, bool include_results) {
  return {{"model", to_json(e.model, include_results)},
          {"carry_forward", to_json(e.carry_forward, false)},
          {"linear_trend", to_json(e.linear_trend, false)}};
}

const Cohort& select_split(const CohortSplits& splits, std::string_view name) {
  if (name == "train") return splits.train;
  if (name == "val") return splits.val;
  if (name == "test") return splits.test;
  throw ValidationError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

}  // namespace cmwm
