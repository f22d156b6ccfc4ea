#pragma once

// End-to-end workflows shared by the CLI and the acceptance suite: split and
// standardise a cohort, train from a run config, evaluate a split against
// the naive baselines, and build the communication-channel ablation inputs.

#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmwm/checkpoint.hpp"
#include "cmwm/config.hpp"

namespace cmwm {

enum class CommVariant {
  full,       // recorded communication embedding
  intensity,  // log1p of the comm_volume counts instead of the embedding
  none,       // zero communication vector everywhere
};

std::string to_string(CommVariant v);
CommVariant comm_variant_from_string(std::string_view name);

// Intensity needs comm_volume on every period; throws ValidationError otherwise.
Cohort apply_comm_variant(const Cohort& cohort, CommVariant variant);

struct PreparedData {
  CohortSplits splits;
  Standardizer standardizer;
  std::vector<std::string> warnings;
};

PreparedData prepare_data(const Cohort& cohort, const DataConfig& cfg);

struct TrainOutcome {
  Checkpoint checkpoint;
  FitResult fit;
};

// Model dimensions that depend on the data are taken from the cohort.
TrainOutcome train_model(const RunConfig& cfg, const PreparedData& data,
                         const EpochCallback& on_epoch = {});

struct SplitEvaluation {
  EvaluationReport model;
  EvaluationReport carry_forward;
  EvaluationReport linear_trend;
};

SplitEvaluation evaluate_split(const Checkpoint& ckpt, const Cohort& split,
                               const RolloutConfig& cfg, std::size_t threads = 1);
nlohmann::json to_json(const SplitEvaluation& e, bool include_results = true);

const Cohort& select_split(const CohortSplits& splits, std::string_view name);

}  // namespace cmwm
