#pragma once

// Synthetic cohort with known action-conditioned target dynamics.
//
// For period t with structured actions a_t and communication embedding c_t,
//   y_{t+1} = y_t + base_decline + sum_j effect_j a_tj
//                 + adherence_effect <c_t, direction> + noise_t
// where c_t = adherence_t * direction + isotropic noise, or the zero vector
// (no communication) with probability p_no_comm.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "cmwm/cohort.hpp"

namespace cmwm {

struct SyntheticSpec {
  std::size_t n_patients = 200;
  std::size_t min_periods = 5;
  std::size_t max_periods = 10;
  double baseline_mean = 70.0;
  double baseline_std = 15.0;
  double base_decline = -1.5;
  std::vector<double> action_effects{2.0, -2.0, 2.0, -2.0};
  double action_prob = 0.4;
  std::size_t d_a_comm = 16;
  // Empty means: draw a unit direction from the seed.
  std::vector<double> signal_direction;
  double adherence_effect = 2.0;
  double adherence_std = 1.0;
  double comm_noise_std = 0.3;
  double p_no_comm = 1.0 / 3.0;
  double noise_std = 2.0;
  double protein_missing_prob = 0.28;
  std::size_t n_categories = 3;
  std::uint64_t seed = 7;

  void validate() const;
};

class SyntheticOracle {
 public:
  SyntheticOracle() = default;
  SyntheticOracle(SyntheticSpec spec, std::vector<double> direction)
      : spec_(std::move(spec)), direction_(std::move(direction)) {}

  const SyntheticSpec& spec() const noexcept { return spec_; }
  const std::vector<double>& direction() const noexcept { return direction_; }

  // Noise-free change applied after a period with these actions.
  double expected_step(std::span<const double> a_struct, std::span<const double> a_comm) const;
  double expected_step(const PeriodRecord& period) const {
    return expected_step(period.a_struct, period.a_comm);
  }
  // Noise-free target for every period index: y[0] = y0, y[t+1] = y[t] + step(t).
  std::vector<double> expected_trajectory(double y0, std::span<const PeriodRecord> periods) const;
  // y0 plus the expected steps of all given periods.
  double expected_after(double y0, std::span<const PeriodRecord> periods) const;
  // Noisy path with the same dynamics, for Monte-Carlo checks.
  std::vector<double> simulate_trajectory(double y0, std::span<const PeriodRecord> periods,
                                          std::mt19937_64& rng) const;

  void set_baseline(const std::string& patient_id, double y0) { baselines_[patient_id] = y0; }
  double baseline(const std::string& patient_id) const;
  // Expected trajectory of a generated patient under its recorded actions.
  std::vector<double> expected_trajectory(const PatientRecord& patient) const;

  nlohmann::json to_json(const Cohort& cohort) const;

 private:
  SyntheticSpec spec_;
  std::vector<double> direction_;
  std::unordered_map<std::string, double> baselines_;
};

struct SyntheticCohort {
  Cohort cohort;
  SyntheticOracle oracle;
  std::vector<std::string> action_labels;
};

// State x = [target, age, log urine protein, protein missing flag, visit count],
// tau = [age, gap since previous period, years since baseline],
// static = [sex one-hot (2), category one-hot (n_categories)],
// comm_volume = [messages, characters, chunks].
SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec);

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

}  // namespace cmwm
