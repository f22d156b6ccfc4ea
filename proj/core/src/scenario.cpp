#include "cmwm/scenario.hpp"

#include <httplib.h>

#include "cmwm/config.hpp"
#include "cmwm/errors.hpp"

namespace cmwm {

namespace {

using nlohmann::json;

// 400-class problem with the request itself.
struct BadRequest : ValidationError {
  using ValidationError::ValidationError;
};

ServiceResponse error_response(int status, const std::string& message) {
  return {status, {{"error", message}}};
}

std::size_t index_field(const json& j, const char* what) {
  if (!j.is_number_integer() || j.get<long long>() < 0) {
    throw BadRequest(std::string(what) + " must be a non-negative integer");
  }
  return j.get<std::size_t>();
}

std::vector<double> vector_field(const json& j, std::size_t dim, const char* what) {
  std::vector<double> v;
  try {
    v = j.get<std::vector<double>>();
  } catch (const json::exception&) {
    throw BadRequest(std::string(what) + " must be an array of numbers");
  }
  if (v.size() != dim) {
    throw BadRequest(std::string(what) + " must have " + std::to_string(dim) + " entries, got " +
                     std::to_string(v.size()));
  }
  return v;
}

}  // namespace

ScenarioService::ScenarioService(Checkpoint checkpoint, Cohort cohort,
                                 std::vector<std::string> labels, EmbeddingProvider* provider,
                                 RolloutConfig defaults)
    : ckpt_(std::move(checkpoint)),
      cohort_(std::move(cohort)),
      labels_(std::move(labels)),
      provider_(provider),
      defaults_(defaults),
      forecaster_(ckpt_.model) {
  defaults_.validate();
  const ModelConfig& cfg = ckpt_.model.config();
  if (!cohort_.patients.empty()) {
    const CohortDims& d = cohort_.dims;
    if (d.d_x != cfg.d_x || d.d_a_struct != cfg.d_a_struct || d.d_a_comm != cfg.d_a_comm ||
        d.d_tau != cfg.d_tau || d.d_static != cfg.d_static_in) {
      throw ValidationError("cohort dimensions do not match the checkpoint's model config");
    }
  }
  if (labels_.empty()) {
    for (std::size_t j = 0; j < cfg.d_a_struct; ++j) labels_.push_back("action_" + std::to_string(j));
  } else if (labels_.size() != cfg.d_a_struct) {
    throw ValidationError("action labels: expected " + std::to_string(cfg.d_a_struct) +
                          " entries, got " + std::to_string(labels_.size()));
  }
}

ServiceResponse ScenarioService::list_patients() const {
  json patients = json::array();
  for (const auto& p : cohort_.patients) {
    patients.push_back({{"patient_id", p.patient_id},
                        {"periods", p.length()},
                        {"last_observed", p.periods.back().y_raw()}});
  }
  return {200, {{"patients", std::move(patients)}}};
}

ServiceResponse ScenarioService::get_patient(std::string_view id) const {
  const PatientRecord* p = cohort_.find(id);
  if (p == nullptr) return error_response(404, "unknown patient '" + std::string(id) + "'");
  json periods = json::array();
  for (std::size_t t = 0; t < p->length(); ++t) {
    const PeriodRecord& r = p->periods[t];
    bool has_comm = false;
    for (double v : r.a_comm) has_comm = has_comm || v != 0.0;
    periods.push_back({{"period", t},
                       {"y", r.y_raw()},
                       {"x", r.x},
                       {"a_struct", r.a_struct},
                       {"tau", r.tau},
                       {"has_comm", has_comm}});
  }
  const bool evaluable = p->length() > context_for(defaults_, p->length());
  return {200,
          {{"patient_id", p->patient_id},
           {"periods", p->length()},
           {"static", p->static_raw},
           {"history", std::move(periods)},
           {"action_labels", labels_},
           {"default_context",
            evaluable ? json(context_for(defaults_, p->length())) : json(nullptr)}}};
}

ServiceResponse ScenarioService::model_info() const {
  return {200,
          {{"version", kServiceVersion},
           {"model", to_json(ckpt_.model.config())},
           {"parameter_count", ckpt_.model.parameter_count()},
           {"epoch", ckpt_.epoch},
           {"validation", to_json(ckpt_.validation)},
           {"rollout_defaults", to_json(defaults_)},
           {"action_labels", labels_}}};
}

ServiceResponse ScenarioService::rollout(const json& scenario) const {
  try {
    if (!scenario.is_object()) throw BadRequest("scenario must be a JSON object");
    for (const auto& [key, _] : scenario.items()) {
      if (key != "patient_id" && key != "context_len" && key != "edits" && key != "anchor") {
        throw BadRequest("unknown scenario key '" + key + "'");
      }
    }
    if (!scenario.contains("patient_id") || !scenario.at("patient_id").is_string()) {
      throw BadRequest("patient_id (string) is required");
    }
    const std::string id = scenario.at("patient_id").get<std::string>();
    const PatientRecord* patient = cohort_.find(id);
    if (patient == nullptr) return error_response(404, "unknown patient '" + id + "'");

    const std::size_t T = patient->length();
    const ModelConfig& mc = ckpt_.model.config();
    RolloutConfig cfg = defaults_;
    std::size_t c = context_for(defaults_, T);
    if (scenario.contains("context_len")) c = index_field(scenario.at("context_len"), "context_len");
    if (c < cfg.min_context || c >= T) {
      throw BadRequest("context_len " + std::to_string(c) + " outside [" +
                       std::to_string(cfg.min_context) + ", " + std::to_string(T) +
                       ") for patient '" + id + "'");
    }
    if (scenario.contains("anchor")) {
      const json& a = scenario.at("anchor");
      if (!a.is_object()) throw BadRequest("anchor must be an object");
      try {
        cfg.anchor_enabled = a.value("enabled", cfg.anchor_enabled);
        cfg.anchor_weight = a.value("weight", cfg.anchor_weight);
        cfg.anchor_jump_cap = a.value("cap", cfg.anchor_jump_cap);
      } catch (const json::exception& e) {
        throw BadRequest(std::string("anchor: ") + e.what());
      }
      try {
        cfg.validate();
      } catch (const ValidationError& e) {
        throw BadRequest(e.what());
      }
    }

    PatientRecord edited = *patient;
    if (scenario.contains("edits")) {
      const json& edits = scenario.at("edits");
      if (!edits.is_array()) throw BadRequest("edits must be an array");
      for (const json& e : edits) {
        if (!e.is_object() || !e.contains("period")) throw BadRequest("each edit needs a period");
        for (const auto& [key, _] : e.items()) {
          if (key != "period" && key != "set" && key != "clear" && key != "comm_text" &&
              key != "comm_embedding" && key != "tau") {
            throw BadRequest("unknown edit key '" + key + "'");
          }
        }
        const std::size_t period = index_field(e.at("period"), "edit period");
        if (period < c || period >= T) {
          throw BadRequest("edit period " + std::to_string(period) + " is not a future period [" +
                           std::to_string(c) + ", " + std::to_string(T) + ")");
        }
        PeriodRecord& r = edited.periods[period];
        for (const char* op : {"set", "clear"}) {
          if (!e.contains(op)) continue;
          if (!e.at(op).is_array()) throw BadRequest(std::string(op) + " must be an array");
          for (const json& idx : e.at(op)) {
            const std::size_t j = index_field(idx, "action index");
            if (j >= mc.d_a_struct) {
              throw BadRequest("action index " + std::to_string(j) + " out of range [0, " +
                               std::to_string(mc.d_a_struct) + ")");
            }
            r.a_struct[j] = std::string_view(op) == "set" ? 1.0 : 0.0;
          }
        }
        if (e.contains("comm_text") && e.contains("comm_embedding")) {
          throw BadRequest("give either comm_text or comm_embedding, not both");
        }
        if (e.contains("comm_embedding")) {
          r.a_comm = vector_field(e.at("comm_embedding"), mc.d_a_comm, "comm_embedding");
        }
        if (e.contains("comm_text")) {
          if (!e.at("comm_text").is_string()) throw BadRequest("comm_text must be a string");
          if (provider_ == nullptr) throw BadRequest("no embedding provider configured");
          const Message msg{0, e.at("comm_text").get<std::string>()};
          r.a_comm = embed_transcript(std::span<const Message>(&msg, 1), *provider_, mc.d_a_comm);
        }
        if (e.contains("tau")) r.tau = vector_field(e.at("tau"), mc.d_tau, "tau");
      }
    }

    const Standardizer& st = ckpt_.standardizer;
    const RolloutResult base = cmwm::rollout(forecaster_, st, *patient, c, cfg);
    const RolloutResult cf = cmwm::rollout(forecaster_, st, edited, c, cfg);
    json periods = json::array(), baseline = json::array(), counterfactual = json::array(),
         delta = json::array(), observed = json::array();
    for (std::size_t k = 0; k < base.points.size(); ++k) {
      periods.push_back(base.points[k].period);
      baseline.push_back(base.points[k].y_hat);
      counterfactual.push_back(cf.points[k].y_hat);
      delta.push_back(cf.points[k].y_hat - base.points[k].y_hat);
      observed.push_back(base.points[k].y_true);
    }
    json history_periods = json::array(), history_y = json::array();
    for (std::size_t t = 0; t < c; ++t) {
      history_periods.push_back(t);
      history_y.push_back(patient->periods[t].y_raw());
    }
    return {200,
            {{"patient_id", id},
             {"context_len", c},
             {"anchored", cfg.anchor_enabled},
             {"history", {{"periods", std::move(history_periods)}, {"y", std::move(history_y)}}},
             {"periods", std::move(periods)},
             {"baseline", std::move(baseline)},
             {"counterfactual", std::move(counterfactual)},
             {"delta", std::move(delta)},
             {"observed", std::move(observed)}}};
  } catch (const BadRequest& e) {
    return error_response(400, e.what());
  } catch (const ProviderError& e) {
    return error_response(502, std::string("embedding provider failed: ") + e.what());
  }
}

// ---------------------------------------------------------------- HTTP

struct ScenarioServer::Impl {
  Impl(const ScenarioService& s, std::string o) : service(s), origin(std::move(o)) {}
  const ScenarioService& service;
  std::string origin;
  httplib::Server server;
};

namespace {

void reply(httplib::Response& res, const ServiceResponse& r) {
  res.status = r.status;
  res.set_content(r.body.dump(), "application/json");
}

}  // namespace

ScenarioServer::ScenarioServer(const ScenarioService& service, std::string cors_origin)
    : impl_(std::make_unique<Impl>(service, std::move(cors_origin))) {
  auto& srv = impl_->server;
  srv.set_default_headers({{"Access-Control-Allow-Origin", impl_->origin},
                           {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                           {"Access-Control-Allow-Headers", "Content-Type"}});
  const ScenarioService& svc = impl_->service;
  srv.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
  });
  srv.Get("/v1/patients", [&svc](const httplib::Request&, httplib::Response& res) {
    reply(res, svc.list_patients());
  });
  srv.Get(R"(/v1/patients/([^/]+))", [&svc](const httplib::Request& req, httplib::Response& res) {
    reply(res, svc.get_patient(req.matches[1].str()));
  });
  srv.Get("/v1/model", [&svc](const httplib::Request&, httplib::Response& res) {
    reply(res, svc.model_info());
  });
  srv.Post("/v1/rollout", [&svc](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      reply(res, error_response(400, std::string("malformed JSON: ") + e.what()));
      return;
    }
    reply(res, svc.rollout(body));
  });
  srv.set_exception_handler(
      [](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
          std::rethrow_exception(ep);
        } catch (const std::exception& e) {
          what = e.what();
        } catch (...) {
        }
        reply(res, error_response(500, what));
      });
}

ScenarioServer::~ScenarioServer() { stop(); }

int ScenarioServer::bind(const std::string& host, int port) {
  auto& srv = impl_->server;
  if (port == 0) {
    const int bound = srv.bind_to_any_port(host);
    if (bound <= 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!srv.bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void ScenarioServer::listen() { impl_->server.listen_after_bind(); }

void ScenarioServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

void ScenarioServer::wait_until_ready() const { impl_->server.wait_until_ready(); }

}  // namespace cmwm
