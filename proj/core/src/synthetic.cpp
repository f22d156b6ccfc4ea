#include "cmwm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "cmwm/errors.hpp"

namespace cmwm {

void SyntheticSpec::validate() const {
  if (n_patients == 0) throw ValidationError("synthetic spec: n_patients must be >= 1");
  if (min_periods < 1 || max_periods < min_periods) {
    throw ValidationError("synthetic spec: need 1 <= min_periods <= max_periods");
  }
  if (action_effects.empty()) throw ValidationError("synthetic spec: need at least one action");
  if (d_a_comm == 0) throw ValidationError("synthetic spec: d_a_comm must be >= 1");
  if (!signal_direction.empty() && signal_direction.size() != d_a_comm) {
    throw ValidationError("synthetic spec: signal_direction must have d_a_comm entries");
  }
  for (double p : {action_prob, p_no_comm, protein_missing_prob}) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("synthetic spec: probabilities in [0, 1]");
  }
  if (baseline_std < 0 || noise_std < 0 || adherence_std < 0 || comm_noise_std < 0) {
    throw ValidationError("synthetic spec: standard deviations must be >= 0");
  }
  if (n_categories == 0) throw ValidationError("synthetic spec: n_categories must be >= 1");
}

// ---------------------------------------------------------------- oracle

double SyntheticOracle::expected_step(std::span<const double> a_struct,
                                      std::span<const double> a_comm) const {
  double step = spec_.base_decline;
  for (std::size_t j = 0; j < spec_.action_effects.size() && j < a_struct.size(); ++j) {
    step += spec_.action_effects[j] * a_struct[j];
  }
  double dot = 0.0;
  for (std::size_t j = 0; j < direction_.size() && j < a_comm.size(); ++j) {
    dot += a_comm[j] * direction_[j];
  }
  return step + spec_.adherence_effect * dot;
}

std::vector<double> SyntheticOracle::expected_trajectory(double y0,
                                                         std::span<const PeriodRecord> periods) const {
  std::vector<double> out;
  if (periods.empty()) return out;
  out.reserve(periods.size());
  out.push_back(y0);
  for (std::size_t t = 0; t + 1 < periods.size(); ++t) {
    out.push_back(out.back() + expected_step(periods[t]));
  }
  return out;
}

double SyntheticOracle::expected_after(double y0, std::span<const PeriodRecord> periods) const {
  double y = y0;
  for (const auto& p : periods) y += expected_step(p);
  return y;
}

std::vector<double> SyntheticOracle::simulate_trajectory(double y0,
                                                         std::span<const PeriodRecord> periods,
                                                         std::mt19937_64& rng) const {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> out;
  if (periods.empty()) return out;
  out.push_back(y0);
  for (std::size_t t = 0; t + 1 < periods.size(); ++t) {
    out.push_back(out.back() + expected_step(periods[t]) + spec_.noise_std * noise(rng));
  }
  return out;
}

double SyntheticOracle::baseline(const std::string& patient_id) const {
  const auto it = baselines_.find(patient_id);
  if (it == baselines_.end()) throw NotFoundError("no synthetic baseline for '" + patient_id + "'");
  return it->second;
}

std::vector<double> SyntheticOracle::expected_trajectory(const PatientRecord& patient) const {
  return expected_trajectory(baseline(patient.patient_id), patient.periods);
}

nlohmann::json SyntheticOracle::to_json(const Cohort& cohort) const {
  nlohmann::json patients = nlohmann::json::array();
  for (const auto& p : cohort.patients) {
    patients.push_back({{"patient_id", p.patient_id},
                        {"y0", baseline(p.patient_id)},
                        {"expected", expected_trajectory(p)}});
  }
  return {{"spec", cmwm::to_json(spec_)},
          {"signal_direction", direction_},
          {"patients", std::move(patients)}};
}

// ---------------------------------------------------------------- generator

SyntheticCohort generate_synthetic_cohort(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<double> direction = spec.signal_direction;
  if (direction.empty()) {
    direction.resize(spec.d_a_comm);
    for (auto& v : direction) v = normal(rng);
  }
  double norm = 0.0;
  for (double v : direction) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw ValidationError("synthetic spec: signal_direction must be nonzero");
  for (auto& v : direction) v /= norm;

  SyntheticCohort out;
  out.oracle = SyntheticOracle(spec, direction);
  const std::size_t n_actions = spec.action_effects.size();
  for (std::size_t j = 0; j < n_actions; ++j) {
    out.action_labels.push_back("action_" + std::to_string(j) + " (effect " +
                                std::to_string(spec.action_effects[j]) + "/period)");
  }

  std::uniform_int_distribution<std::size_t> length(spec.min_periods, spec.max_periods);
  std::uniform_int_distribution<std::size_t> category(0, spec.n_categories - 1);
  std::poisson_distribution<int> visits(3.0);
  std::poisson_distribution<int> messages(30.0);
  std::uniform_real_distribution<double> chars_per_message(40.0, 90.0);
  constexpr double kChunkChars = 6000.0, kChunkStride = 5500.0;

  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    PatientRecord p;
    char id[32];
    std::snprintf(id, sizeof id, "P%05zu", i);
    p.patient_id = id;
    const bool female = unif(rng) < 0.5;
    p.static_raw.assign(2 + spec.n_categories, 0.0);
    p.static_raw[female ? 0 : 1] = 1.0;
    p.static_raw[2 + category(rng)] = 1.0;

    const std::size_t periods = length(rng);
    const double y0 = std::clamp(spec.baseline_mean + spec.baseline_std * normal(rng), 20.0, 150.0);
    const double age0 = std::clamp(35.0 + 10.0 * normal(rng), 18.0, 80.0);
    out.oracle.set_baseline(p.patient_id, y0);

    double y = y0;
    for (std::size_t t = 0; t < periods; ++t) {
      PeriodRecord r;
      const double age = age0 + static_cast<double>(t);
      const bool protein_missing = unif(rng) < spec.protein_missing_prob;
      const double log_protein = protein_missing ? 0.0 : -0.7 + 0.5 * normal(rng);
      const double n_visits = 1.0 + visits(rng);
      r.x = {y, age, log_protein, protein_missing ? 1.0 : 0.0, n_visits};
      r.tau = {age, 1.0, static_cast<double>(t)};

      r.a_struct.resize(n_actions);
      for (auto& a : r.a_struct) a = unif(rng) < spec.action_prob ? 1.0 : 0.0;

      r.a_comm.assign(spec.d_a_comm, 0.0);
      r.comm_volume.assign(3, 0.0);
      if (unif(rng) >= spec.p_no_comm) {
        const double adherence = spec.adherence_std * normal(rng);
        for (std::size_t j = 0; j < spec.d_a_comm; ++j) {
          r.a_comm[j] = adherence * direction[j] + spec.comm_noise_std * normal(rng);
        }
        const double n_msg = 1.0 + messages(rng);
        const double n_chars = std::round(n_msg * chars_per_message(rng));
        const double n_chunks =
            n_chars <= kChunkChars ? 1.0 : 1.0 + std::ceil((n_chars - kChunkChars) / kChunkStride);
        r.comm_volume = {n_msg, n_chars, n_chunks};
      }
      const double step = out.oracle.expected_step(r);
      p.periods.push_back(std::move(r));
      y += step + spec.noise_std * normal(rng);
    }
    out.cohort.patients.push_back(std::move(p));
  }
  out.cohort.dims = validate_patient(out.cohort.patients.front());
  return out;
}

// ---------------------------------------------------------------- JSON

nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"n_patients", s.n_patients},
          {"min_periods", s.min_periods},
          {"max_periods", s.max_periods},
          {"baseline_mean", s.baseline_mean},
          {"baseline_std", s.baseline_std},
          {"base_decline", s.base_decline},
          {"action_effects", s.action_effects},
          {"action_prob", s.action_prob},
          {"d_a_comm", s.d_a_comm},
          {"signal_direction", s.signal_direction},
          {"adherence_effect", s.adherence_effect},
          {"adherence_std", s.adherence_std},
          {"comm_noise_std", s.comm_noise_std},
          {"p_no_comm", s.p_no_comm},
          {"noise_std", s.noise_std},
          {"protein_missing_prob", s.protein_missing_prob},
          {"n_categories", s.n_categories},
          {"seed", s.seed}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("synthetic spec: expected a JSON object");
  SyntheticSpec s;
  std::size_t consumed = 0;
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    ++consumed;
    try {
      j.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw ValidationError(std::string("synthetic spec: bad value for '") + key + "'");
    }
  };
  get("n_patients", s.n_patients);
  get("min_periods", s.min_periods);
  get("max_periods", s.max_periods);
  get("baseline_mean", s.baseline_mean);
  get("baseline_std", s.baseline_std);
  get("base_decline", s.base_decline);
  get("action_effects", s.action_effects);
  get("action_prob", s.action_prob);
  get("d_a_comm", s.d_a_comm);
  get("signal_direction", s.signal_direction);
  get("adherence_effect", s.adherence_effect);
  get("adherence_std", s.adherence_std);
  get("comm_noise_std", s.comm_noise_std);
  get("p_no_comm", s.p_no_comm);
  get("noise_std", s.noise_std);
  get("protein_missing_prob", s.protein_missing_prob);
  get("n_categories", s.n_categories);
  get("seed", s.seed);
  if (consumed != j.size()) {
    const nlohmann::json known = to_json(SyntheticSpec{});
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw ValidationError("synthetic spec: unknown key '" + key + "'");
    }
  }
  s.validate();
  return s;
}

}  // namespace cmwm
