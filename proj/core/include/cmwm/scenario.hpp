#pragma once

// Counterfactual what-if service over a trained checkpoint.
//
// A scenario names a patient, an optional context length and edits to the
// future periods c..T-1: structured actions to set or clear, a replacement
// communication text (embedded through the provider) or embedding, and
// target-time overrides. The action recorded for period p drives the
// forecast of period p+1. The service rolls the patient out twice, once with
// the recorded actions and once with the edited ones, under the same config.
//
// HTTP routes (JSON, CORS enabled):
//   GET  /v1/patients         patient summaries
//   GET  /v1/patients/{id}    history, recorded actions, action labels
//   POST /v1/rollout          scenario -> baseline vs counterfactual
//   GET  /v1/model            config, parameter count, stored metric

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cmwm/checkpoint.hpp"
#include "cmwm/cohort.hpp"
#include "cmwm/embedding.hpp"
#include "cmwm/rollout.hpp"

namespace cmwm {

inline constexpr const char* kServiceVersion = "0.1.0";

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

class ScenarioService {
 public:
  // `labels` may be empty (generic labels are generated) or must have one
  // entry per structured action. `provider` embeds replacement text and may
  // be null, in which case text edits are rejected with 400. It must be safe
  // to call concurrently.
  ScenarioService(Checkpoint checkpoint, Cohort cohort, std::vector<std::string> labels,
                  EmbeddingProvider* provider, RolloutConfig defaults = {});
  ScenarioService(const ScenarioService&) = delete;
  ScenarioService& operator=(const ScenarioService&) = delete;

  ServiceResponse list_patients() const;
  ServiceResponse get_patient(std::string_view id) const;
  ServiceResponse model_info() const;
  ServiceResponse rollout(const nlohmann::json& scenario) const;

  const Checkpoint& checkpoint() const noexcept { return ckpt_; }
  const Cohort& cohort() const noexcept { return cohort_; }

 private:
  Checkpoint ckpt_;
  Cohort cohort_;
  std::vector<std::string> labels_;
  EmbeddingProvider* provider_;
  RolloutConfig defaults_;
  ModelForecaster forecaster_;
};

// Blocking HTTP front end. Requests are handled concurrently; the service is
// only read.
class ScenarioServer {
 public:
  explicit ScenarioServer(const ScenarioService& service, std::string cors_origin = "*");
  ~ScenarioServer();
  ScenarioServer(const ScenarioServer&) = delete;
  ScenarioServer& operator=(const ScenarioServer&) = delete;

  // Port 0 binds any free port. Returns the bound port; throws on failure.
  int bind(const std::string& host, int port);
  // Serves until stop() is called.
  void listen();
  void stop();
  void wait_until_ready() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace cmwm
