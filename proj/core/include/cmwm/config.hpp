#pragma once

// JSON (de)serialisation of every configuration struct and the merged run
// configuration used by the CLI. Readers fill missing keys with defaults and
// reject unknown keys so typos surface as errors.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "cmwm/cohort.hpp"
#include "cmwm/model.hpp"
#include "cmwm/objective.hpp"
#include "cmwm/rollout.hpp"
#include "cmwm/trainer.hpp"

namespace cmwm {

struct DataConfig {
  std::string cohort;  // JSONL path
  std::string labels;  // JSON array of structured-action labels, optional
  SplitFractions split;
  std::uint64_t split_seed = 0;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  LossWeights loss;
  TrainConfig train;
  RolloutConfig rollout;
  std::string output_dir = "run";
};

nlohmann::json to_json(const ModelConfig& c);
nlohmann::json to_json(const LossWeights& w);
nlohmann::json to_json(const AdamWConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const RolloutConfig& c);
nlohmann::json to_json(const SplitFractions& f);
nlohmann::json to_json(const Standardizer& s);
nlohmann::json to_json(const RunConfig& c);

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights base = {});
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
RolloutConfig rollout_config_from_json(const nlohmann::json& j, RolloutConfig base = {});
Standardizer standardizer_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

// Throws ValidationError naming the file on unreadable or invalid JSON.
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Copies the data-determined dimensions of a cohort into a model config.
void apply_cohort_dims(ModelConfig& cfg, const CohortDims& dims);

// Reads a JSON array of strings.
std::vector<std::string> load_action_labels(const std::filesystem::path& path);

}  // namespace cmwm
