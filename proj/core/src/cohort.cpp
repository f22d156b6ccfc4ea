#include "cmwm/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "cmwm/errors.hpp"

namespace cmwm {

using nlohmann::json;

const PatientRecord* Cohort::find(std::string_view id) const {
  for (const auto& p : patients) {
    if (p.patient_id == id) return &p;
  }
  return nullptr;
}

namespace {

std::vector<double> number_array(const json& j, const char* field) {
  if (!j.contains(field)) throw ValidationError(std::string("missing field '") + field + "'");
  const json& arr = j.at(field);
  if (!arr.is_array()) throw ValidationError(std::string("field '") + field + "' is not an array");
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& v : arr) {
    if (!v.is_number()) throw ValidationError(std::string("non-numeric entry in '") + field + "'");
    out.push_back(v.get<double>());
  }
  return out;
}

void check_finite(std::span<const double> v, const char* field) {
  for (double d : v) {
    if (!std::isfinite(d)) throw ValidationError(std::string("non-finite value in '") + field + "'");
  }
}

void check_dim(std::size_t expected, std::size_t got, const char* field) {
  if (expected != got) {
    throw ValidationError(std::string("inconsistent dimension for '") + field + "': expected " +
                          std::to_string(expected) + ", got " + std::to_string(got));
  }
}

PatientRecord patient_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("record is not a JSON object");
  PatientRecord p;
  if (!j.contains("patient_id") || !j.at("patient_id").is_string()) {
    throw ValidationError("missing string field 'patient_id'");
  }
  p.patient_id = j.at("patient_id").get<std::string>();
  p.static_raw = number_array(j, "static");
  if (!j.contains("periods") || !j.at("periods").is_array()) {
    throw ValidationError("missing array field 'periods'");
  }
  for (const auto& pj : j.at("periods")) {
    PeriodRecord r;
    r.x = number_array(pj, "x");
    r.a_struct = number_array(pj, "a_struct");
    r.a_comm = number_array(pj, "a_comm");
    r.tau = number_array(pj, "tau");
    if (pj.contains("comm_volume")) r.comm_volume = number_array(pj, "comm_volume");
    p.periods.push_back(std::move(r));
  }
  return p;
}

json patient_to_json(const PatientRecord& p) {
  json periods = json::array();
  for (const auto& r : p.periods) {
    json pj = {{"x", r.x}, {"a_struct", r.a_struct}, {"a_comm", r.a_comm}, {"tau", r.tau}};
    if (!r.comm_volume.empty()) pj["comm_volume"] = r.comm_volume;
    periods.push_back(std::move(pj));
  }
  return {{"patient_id", p.patient_id}, {"static", p.static_raw}, {"periods", std::move(periods)}};
}

}  // namespace

CohortDims validate_patient(const PatientRecord& p) {
  if (p.patient_id.empty()) throw ValidationError("empty patient_id");
  if (p.periods.empty()) throw ValidationError("patient '" + p.patient_id + "' has no periods");
  check_finite(p.static_raw, "static");
  CohortDims d;
  d.d_static = p.static_raw.size();
  const PeriodRecord& first = p.periods.front();
  d.d_x = first.x.size();
  d.d_a_struct = first.a_struct.size();
  d.d_a_comm = first.a_comm.size();
  d.d_tau = first.tau.size();
  d.d_comm_volume = first.comm_volume.size();
  if (d.d_x == 0) throw ValidationError("state vector 'x' is empty; x[0] must hold the target");
  for (const auto& r : p.periods) {
    check_dim(d.d_x, r.x.size(), "x");
    check_dim(d.d_a_struct, r.a_struct.size(), "a_struct");
    check_dim(d.d_a_comm, r.a_comm.size(), "a_comm");
    check_dim(d.d_tau, r.tau.size(), "tau");
    check_dim(d.d_comm_volume, r.comm_volume.size(), "comm_volume");
    check_finite(r.x, "x");
    check_finite(r.a_comm, "a_comm");
    check_finite(r.tau, "tau");
    check_finite(r.comm_volume, "comm_volume");
    for (double v : r.a_struct) {
      if (v != 0.0 && v != 1.0) {
        throw ValidationError("a_struct entries must be 0 or 1, got " + std::to_string(v));
      }
    }
  }
  return d;
}

Cohort parse_cohort(std::istream& in, SchemaReport* report) {
  Cohort cohort;
  SchemaReport local;
  std::string line;
  std::size_t line_no = 0;
  bool have_dims = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) {
      continue;
    }
    try {
      PatientRecord p = patient_from_json(json::parse(line));
      const CohortDims d = validate_patient(p);
      if (!have_dims) {
        cohort.dims = d;
        have_dims = true;
      } else if (!(d == cohort.dims)) {
        throw ValidationError("dimensions differ from earlier records");
      }
      if (cohort.find(p.patient_id) != nullptr) {
        throw ValidationError("duplicate patient_id '" + p.patient_id + "'");
      }
      local.periods += p.periods.size();
      cohort.patients.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (cohort.patients.empty()) local.warnings.emplace_back("cohort is empty");
  local.patients = cohort.patients.size();
  local.dims = cohort.dims;
  if (report != nullptr) *report = std::move(local);
  return cohort;
}

Cohort load_cohort(const std::filesystem::path& path, SchemaReport* report) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cohort file '" + path.string() + "'");
  return parse_cohort(in, report);
}

void write_cohort(std::ostream& out, const Cohort& cohort) {
  for (const auto& p : cohort.patients) out << patient_to_json(p).dump() << '\n';
}

void save_cohort(const std::filesystem::path& path, const Cohort& cohort) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write cohort file '" + path.string() + "'");
  write_cohort(out, cohort);
}

CohortSplits split_patients(const Cohort& cohort, SplitFractions f, std::uint64_t seed) {
  if (f.train < 0 || f.val < 0 || f.test < 0 ||
      std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw ValidationError("split fractions must be non-negative and sum to 1");
  }
  const std::size_t n = cohort.patients.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  // Explicit Fisher-Yates: std::shuffle's output differs between standard libraries.
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  const auto n_train = static_cast<std::size_t>(std::floor(f.train * static_cast<double>(n) + 1e-9));
  const auto n_val = std::min(n - n_train,
                              static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n) + 1e-9)));
  CohortSplits s;
  s.train.dims = s.val.dims = s.test.dims = cohort.dims;
  for (std::size_t i = 0; i < n; ++i) {
    Cohort& dst = i < n_train ? s.train : (i < n_train + n_val ? s.val : s.test);
    dst.patients.push_back(cohort.patients[order[i]]);
  }
  return s;
}

// ---------------------------------------------------------------- Standardizer

namespace {

std::vector<double> apply(std::span<const double> v, const std::vector<Standardizer::Feature>& f,
                          bool forward, const char* what) {
  if (v.size() != f.size()) {
    throw ShapeError(std::string(what) + ": expected " + std::to_string(f.size()) +
                     " features, got " + std::to_string(v.size()));
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = forward ? (v[i] - f[i].mean) / f[i].std : v[i] * f[i].std + f[i].mean;
  }
  return out;
}

// Two-pass mean / population variance per feature.
std::vector<Standardizer::Feature> fit_features(
    const Cohort& train, std::size_t dim,
    const std::function<const std::vector<double>&(const PeriodRecord&)>& field, const char* what,
    std::vector<std::string>* warnings) {
  std::vector<double> sum(dim), sq(dim);
  std::size_t n = 0;
  for (const auto& p : train.patients)
    for (const auto& r : p.periods) {
      const auto& v = field(r);
      for (std::size_t i = 0; i < dim; ++i) sum[i] += v[i];
      ++n;
    }
  std::vector<Standardizer::Feature> out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i].mean = sum[i] / static_cast<double>(n);
  for (const auto& p : train.patients)
    for (const auto& r : p.periods) {
      const auto& v = field(r);
      for (std::size_t i = 0; i < dim; ++i) sq[i] += (v[i] - out[i].mean) * (v[i] - out[i].mean);
    }
  for (std::size_t i = 0; i < dim; ++i) {
    const double sd = std::sqrt(sq[i] / static_cast<double>(n));
    if (sd > 1e-12 * std::max(1.0, std::abs(out[i].mean))) {
      out[i].std = sd;
    } else {
      out[i].std = 1.0;
      out[i].degenerate = true;
      if (warnings != nullptr) {
        warnings->push_back(std::string(what) + "[" + std::to_string(i) +
                            "] has zero variance on train; std set to 1");
      }
    }
  }
  return out;
}

}  // namespace

std::vector<double> Standardizer::standardize_x(std::span<const double> x) const {
  return apply(x, x_, true, "standardize_x");
}

std::vector<double> Standardizer::destandardize_x(std::span<const double> x_std) const {
  return apply(x_std, x_, false, "destandardize_x");
}

std::vector<double> Standardizer::standardize_tau(std::span<const double> tau) const {
  return apply(tau, tau_, true, "standardize_tau");
}

Standardizer fit_standardizer(const Cohort& train, std::vector<std::string>* warnings) {
  if (train.patients.empty()) throw ValidationError("cannot fit a standardizer on an empty cohort");
  const CohortDims& d = train.dims;
  using Feature = Standardizer::Feature;
  std::vector<Feature> xf = fit_features(
      train, d.d_x, [](const PeriodRecord& r) -> const std::vector<double>& { return r.x; }, "x",
      warnings);
  std::vector<Feature> tf = fit_features(
      train, d.d_tau, [](const PeriodRecord& r) -> const std::vector<double>& { return r.tau; },
      "tau", warnings);
  const Feature target = xf.at(kTargetSlot);
  return Standardizer(std::move(xf), std::move(tf), target);
}

}  // namespace cmwm
