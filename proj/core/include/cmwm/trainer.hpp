#pragma once

// Rollout-prefix training. Every prefix length c in [c_min, T) of a training
// patient is one trajectory: warm up on the observed prefix, then unroll up
// to max_horizon steps with each prediction written back into the next
// state's target slot, exactly as during evaluation.

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cmwm/cohort.hpp"
#include "cmwm/model.hpp"
#include "cmwm/objective.hpp"
#include "cmwm/optimizer.hpp"
#include "cmwm/rollout.hpp"

namespace cmwm {

struct TrainConfig {
  AdamWConfig optimizer;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t c_min = 3;
  std::size_t max_horizon = 8;
  // Step k of a trajectory is weighted by horizon_decay^(k-1).
  double horizon_decay = 0.7;
  FeedbackClip feedback;
  // Model selection rolls out with anchoring off unless this is set.
  bool selection_anchor = false;
  std::uint64_t seed = 0;
  // Worker threads for validation rollouts.
  std::size_t threads = 1;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct PrefixSample {
  std::size_t patient = 0;  // index into the cohort's patients
  std::size_t context = 0;
  std::size_t horizon = 0;  // min(max_horizon, T - context)

  friend bool operator==(const PrefixSample&, const PrefixSample&) = default;
};

// All (patient, c) pairs in cohort order.
std::vector<PrefixSample> enumerate_rollout_prefixes(const Cohort& cohort, const TrainConfig& cfg);
void shuffle_samples(std::vector<PrefixSample>& samples, std::mt19937_64& rng);

struct UnrollTrace {
  // Per prediction step; sigreg is 0 here because it is a batch-level term.
  std::vector<LossBreakdown> steps;
  std::vector<Var> step_totals;
  // Standardised states handed to the state encoder, in order: the warm-up
  // periods followed by the fed-back states.
  std::vector<std::vector<double>> inputs;
  std::vector<double> predictions_std;
  std::vector<Var> encoded_latents;
  std::vector<Var> predicted_latents;
};

// Records one trajectory on the graph's tape. Loss targets use the observed
// values of the predicted period; the next-latent target is the eval-mode
// state encoding of the observed next state, computed off-tape and entered
// as a constant. `latent_target` encodes those targets instead of the
// graph's model when set (finite-difference checks freeze it).
UnrollTrace unroll_training_trajectory(ModelGraph& graph, const PatientRecord& patient,
                                       const PrefixSample& sample, const Standardizer& st,
                                       const LossWeights& weights, const TrainConfig& cfg,
                                       const CmwmModel* latent_target = nullptr);

// sum_k gamma^(k-1) total_k / sum_k gamma^(k-1). Throws on an empty list.
double aggregate_horizon_losses(std::span<const double> totals, double gamma);
Var aggregate_horizon_losses(std::span<const Var> totals, double gamma);

struct BatchStats {
  double loss = 0.0;
  // Mean of each term over all (trajectory, step) pairs; sigreg is the
  // batch value and total recombines the means.
  LossBreakdown terms;
  std::size_t trajectories = 0;
  std::size_t steps = 0;
};

// Minibatch objective: mean over trajectories of the horizon-aggregated step
// totals, plus lambda_sig times SIGReg over all latents of the batch with
// fresh projections drawn from rng. `graph` must be in train mode for
// training; eval mode gives the dropout-free objective.
Var batch_objective(ModelGraph& graph, const Cohort& cohort, std::span<const PrefixSample> batch,
                    const Standardizer& st, const LossWeights& weights, const TrainConfig& cfg,
                    std::mt19937_64& rng, BatchStats* stats = nullptr,
                    const CmwmModel* latent_target = nullptr);

struct EpochRecord {
  std::size_t epoch = 0;  // 0 is the untrained model
  double loss = 0.0;
  LossBreakdown terms;
  double grad_norm = 0.0;  // mean pre-clip norm
  MetricSummary validation;
  std::size_t samples = 0;
  double seconds = 0.0;
};

struct FitResult {
  CmwmModel best;
  std::size_t best_epoch = 0;
  MetricSummary best_validation;
  std::vector<EpochRecord> history;
};

RolloutConfig selection_rollout_config(const TrainConfig& cfg);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains a copy of `model` and returns the parameters with the lowest
// validation dynamic-50% MAE (epoch 0 included). Throws NumericError with a
// description of the offending batch if the loss or a gradient goes
// non-finite.
FitResult fit(CmwmModel model, const Cohort& train, const Cohort& val, const Standardizer& st,
              const TrainConfig& cfg, const LossWeights& weights,
              const EpochCallback& on_epoch = {});

nlohmann::json to_json(const EpochRecord& r);

}  // namespace cmwm
