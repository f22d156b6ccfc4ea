#pragma once

// Versioned binary checkpoint:
//   "CMWMCKPT" | u32 version | u64 n | n bytes of JSON metadata
//   | u64 tensor count | per tensor: u32 name length, name, u64 rows,
//     u64 cols, rows*cols little-endian IEEE-754 doubles
// Parameters are stored as raw bits, so a save/load round trip is exact.

#include <filesystem>
#include <iosfwd>
#include <string>

#include <nlohmann/json.hpp>

#include "cmwm/cohort.hpp"
#include "cmwm/model.hpp"
#include "cmwm/objective.hpp"
#include "cmwm/rollout.hpp"
#include "cmwm/trainer.hpp"

namespace cmwm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  CmwmModel model;
  Standardizer standardizer;
  LossWeights loss;
  TrainConfig train;
  std::size_t epoch = 0;
  MetricSummary validation;
  // Resolved run configuration the checkpoint was produced with.
  nlohmann::json run_config = nlohmann::json::object();
};

void write_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

nlohmann::json checkpoint_metadata(const Checkpoint& ckpt);

}  // namespace cmwm
