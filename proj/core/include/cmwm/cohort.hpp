#pragma once

// Cohort data model, JSONL ingestion, train-set standardisation and
// patient-level splitting.
//
// JSONL schema, one patient per line:
//   {"patient_id": str, "static": [f64],
//    "periods": [{"x": [f64], "a_struct": [0|1], "a_comm": [f64], "tau": [f64],
//                 "comm_volume": [f64]   (optional)}]}
// x[0] is the target observable in raw units.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace cmwm {

inline constexpr std::size_t kTargetSlot = 0;

struct PeriodRecord {
  std::vector<double> x;
  std::vector<double> a_struct;
  std::vector<double> a_comm;
  std::vector<double> tau;
  // Communication intensity (messages, characters, chunks); may be empty.
  std::vector<double> comm_volume;

  double y_raw() const { return x.at(kTargetSlot); }

  friend bool operator==(const PeriodRecord&, const PeriodRecord&) = default;
};

struct PatientRecord {
  std::string patient_id;
  std::vector<double> static_raw;
  std::vector<PeriodRecord> periods;

  std::size_t length() const noexcept { return periods.size(); }

  friend bool operator==(const PatientRecord&, const PatientRecord&) = default;
};

struct CohortDims {
  std::size_t d_x = 0;
  std::size_t d_a_struct = 0;
  std::size_t d_a_comm = 0;
  std::size_t d_tau = 0;
  std::size_t d_static = 0;
  std::size_t d_comm_volume = 0;

  friend bool operator==(const CohortDims&, const CohortDims&) = default;
};

struct Cohort {
  std::vector<PatientRecord> patients;
  CohortDims dims;

  const PatientRecord* find(std::string_view id) const;
};

struct SchemaReport {
  std::size_t patients = 0;
  std::size_t periods = 0;
  CohortDims dims;
  std::vector<std::string> warnings;
};

// Parses and validates a cohort. Throws ValidationError naming the 1-based
// line number for malformed input or dimensions that disagree across records.
Cohort parse_cohort(std::istream& in, SchemaReport* report = nullptr);
Cohort load_cohort(const std::filesystem::path& path, SchemaReport* report = nullptr);
void write_cohort(std::ostream& out, const Cohort& cohort);
void save_cohort(const std::filesystem::path& path, const Cohort& cohort);

// Checks the per-record invariants and returns the record's dimensions.
CohortDims validate_patient(const PatientRecord& patient);

struct SplitFractions {
  double train = 0.7;
  double val = 0.15;
  double test = 0.15;
};

struct CohortSplits {
  Cohort train, val, test;
};

// Seeded shuffle, then floor(train*n) / floor(val*n) / remainder.
CohortSplits split_patients(const Cohort& cohort, SplitFractions fractions, std::uint64_t seed);

class Standardizer {
 public:
  struct Feature {
    double mean = 0.0;
    double std = 1.0;
    bool degenerate = false;  // zero variance on train, std forced to 1

    friend bool operator==(const Feature&, const Feature&) = default;
  };

  Standardizer() = default;
  Standardizer(std::vector<Feature> x, std::vector<Feature> tau, Feature target)
      : x_(std::move(x)), tau_(std::move(tau)), target_(target) {}

  std::vector<double> standardize_x(std::span<const double> x) const;
  std::vector<double> destandardize_x(std::span<const double> x_std) const;
  std::vector<double> standardize_tau(std::span<const double> tau) const;
  double target_to_std(double raw) const { return (raw - target_.mean) / target_.std; }
  double target_to_raw(double standardized) const {
    return standardized * target_.std + target_.mean;
  }

  const std::vector<Feature>& x_features() const noexcept { return x_; }
  const std::vector<Feature>& tau_features() const noexcept { return tau_; }
  const Feature& target() const noexcept { return target_; }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;

 private:
  std::vector<Feature> x_;
  std::vector<Feature> tau_;
  Feature target_;
};

// Means/stds over all train patient-periods (population std). Zero-variance
// features get std = 1 and a warning appended to `warnings` when given.
Standardizer fit_standardizer(const Cohort& train, std::vector<std::string>* warnings = nullptr);

}  // namespace cmwm
