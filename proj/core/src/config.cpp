#include "cmwm/config.hpp"

#include <fstream>
#include <initializer_list>

#include "cmwm/errors.hpp"

namespace cmwm {

namespace {

using nlohmann::json;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* section) {
  if (!j.is_object()) throw ValidationError(std::string(section) + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ValidationError(std::string(section) + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& field, const char* section) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const json::exception& e) {
    throw ValidationError(std::string(section) + "." + key + ": " + e.what());
  }
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "dynamic50") return Protocol::dynamic50;
  if (s == "fixed") return Protocol::fixed;
  throw ValidationError("rollout.protocol: expected 'dynamic50' or 'fixed', got '" + s + "'");
}

json feature_json(const Standardizer::Feature& f) {
  return {{"mean", f.mean}, {"std", f.std}, {"degenerate", f.degenerate}};
}

Standardizer::Feature feature_from_json(const json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("degenerate").get<bool>()};
}

json feedback_json(const FeedbackClip& f) {
  return {{"enabled", f.enabled}, {"min", f.min}, {"max", f.max}};
}

FeedbackClip feedback_from_json(const json& j, FeedbackClip f, const char* section) {
  check_keys(j, {"enabled", "min", "max"}, section);
  read(j, "enabled", f.enabled, section);
  read(j, "min", f.min, section);
  read(j, "max", f.max, section);
  return f;
}

}  // namespace

// ---------------------------------------------------------------- writers

nlohmann::json to_json(const ModelConfig& c) {
  return {{"d_x", c.d_x},
          {"d_a_struct", c.d_a_struct},
          {"d_a_comm", c.d_a_comm},
          {"d_tau", c.d_tau},
          {"d_static_in", c.d_static_in},
          {"d_b", c.d_b},
          {"d_z", c.d_z},
          {"d_u", c.d_u},
          {"d_h", c.d_h},
          {"dropout", c.dropout},
          {"context_len", c.context_len},
          {"seed", c.seed},
          {"action_encoder", to_string(c.action_encoder)}};
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"lambda_z", w.lambda_z},
          {"lambda_sig", w.lambda_sig},
          {"lambda_slope", w.lambda_slope},
          {"lambda_cont", w.lambda_cont},
          {"lambda_jump", w.lambda_jump},
          {"delta_c", w.delta_c},
          {"delta_j", w.delta_j},
          {"smooth_l1_beta", w.smooth_l1_beta},
          {"sigreg_knots", w.sigreg_knots},
          {"sigreg_t_max", w.sigreg_t_max},
          {"sigreg_projections", w.sigreg_projections},
          {"sigreg_include_predicted", w.sigreg_include_predicted}};
}

nlohmann::json to_json(const AdamWConfig& c) {
  return {{"lr", c.lr},           {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},     {"beta2", c.beta2},
          {"eps", c.eps},         {"grad_clip_norm", c.grad_clip_norm}};
}

nlohmann::json to_json(const TrainConfig& c) {
  json j = to_json(c.optimizer);
  j.update({{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"c_min", c.c_min},
            {"max_horizon", c.max_horizon},
            {"horizon_decay", c.horizon_decay},
            {"feedback", feedback_json(c.feedback)},
            {"selection_anchor", c.selection_anchor},
            {"seed", c.seed},
            {"threads", c.threads}});
  return j;
}

nlohmann::json to_json(const RolloutConfig& c) {
  return {{"protocol", c.protocol == Protocol::dynamic50 ? "dynamic50" : "fixed"},
          {"fixed_context", c.fixed_context},
          {"min_context", c.min_context},
          {"anchor_enabled", c.anchor_enabled},
          {"anchor_weight", c.anchor_weight},
          {"anchor_jump_cap", c.anchor_jump_cap},
          {"trend_window", c.trend_window},
          {"feedback", feedback_json(c.feedback)}};
}

nlohmann::json to_json(const SplitFractions& f) {
  return {{"train", f.train}, {"val", f.val}, {"test", f.test}};
}

nlohmann::json to_json(const Standardizer& s) {
  json x = json::array(), tau = json::array();
  for (const auto& f : s.x_features()) x.push_back(feature_json(f));
  for (const auto& f : s.tau_features()) tau.push_back(feature_json(f));
  return {{"x", std::move(x)}, {"tau", std::move(tau)}, {"target", feature_json(s.target())}};
}

nlohmann::json to_json(const RunConfig& c) {
  return {{"data",
           {{"cohort", c.data.cohort},
            {"labels", c.data.labels},
            {"split", to_json(c.data.split)},
            {"split_seed", c.data.split_seed}}},
          {"model", to_json(c.model)},
          {"loss", to_json(c.loss)},
          {"train", to_json(c.train)},
          {"rollout", to_json(c.rollout)},
          {"output_dir", c.output_dir}};
}

// ---------------------------------------------------------------- readers

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  constexpr const char* s = "model";
  check_keys(j, {"d_x", "d_a_struct", "d_a_comm", "d_tau", "d_static_in", "d_b", "d_z", "d_u",
                 "d_h", "dropout", "context_len", "seed", "action_encoder"},
             s);
  read(j, "d_x", c.d_x, s);
  read(j, "d_a_struct", c.d_a_struct, s);
  read(j, "d_a_comm", c.d_a_comm, s);
  read(j, "d_tau", c.d_tau, s);
  read(j, "d_static_in", c.d_static_in, s);
  read(j, "d_b", c.d_b, s);
  read(j, "d_z", c.d_z, s);
  read(j, "d_u", c.d_u, s);
  read(j, "d_h", c.d_h, s);
  read(j, "dropout", c.dropout, s);
  read(j, "context_len", c.context_len, s);
  read(j, "seed", c.seed, s);
  if (j.contains("action_encoder")) {
    c.action_encoder = action_encoder_from_string(j.at("action_encoder").get<std::string>());
  }
  c.validate();
  return c;
}

LossWeights loss_weights_from_json(const nlohmann::json& j, LossWeights w) {
  constexpr const char* s = "loss";
  check_keys(j, {"lambda_z", "lambda_sig", "lambda_slope", "lambda_cont", "lambda_jump", "delta_c",
                 "delta_j", "smooth_l1_beta", "sigreg_knots", "sigreg_t_max",
                 "sigreg_projections", "sigreg_include_predicted"},
             s);
  read(j, "lambda_z", w.lambda_z, s);
  read(j, "lambda_sig", w.lambda_sig, s);
  read(j, "lambda_slope", w.lambda_slope, s);
  read(j, "lambda_cont", w.lambda_cont, s);
  read(j, "lambda_jump", w.lambda_jump, s);
  read(j, "delta_c", w.delta_c, s);
  read(j, "delta_j", w.delta_j, s);
  read(j, "smooth_l1_beta", w.smooth_l1_beta, s);
  read(j, "sigreg_knots", w.sigreg_knots, s);
  read(j, "sigreg_t_max", w.sigreg_t_max, s);
  read(j, "sigreg_projections", w.sigreg_projections, s);
  read(j, "sigreg_include_predicted", w.sigreg_include_predicted, s);
  w.validate();
  return w;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
  constexpr const char* s = "train";
  check_keys(j, {"lr", "weight_decay", "beta1", "beta2", "eps", "grad_clip_norm", "epochs",
                 "batch_size", "c_min", "max_horizon", "horizon_decay", "feedback",
                 "selection_anchor", "seed", "threads"},
             s);
  read(j, "lr", c.optimizer.lr, s);
  read(j, "weight_decay", c.optimizer.weight_decay, s);
  read(j, "beta1", c.optimizer.beta1, s);
  read(j, "beta2", c.optimizer.beta2, s);
  read(j, "eps", c.optimizer.eps, s);
  read(j, "grad_clip_norm", c.optimizer.grad_clip_norm, s);
  read(j, "epochs", c.epochs, s);
  read(j, "batch_size", c.batch_size, s);
  read(j, "c_min", c.c_min, s);
  read(j, "max_horizon", c.max_horizon, s);
  read(j, "horizon_decay", c.horizon_decay, s);
  if (j.contains("feedback")) c.feedback = feedback_from_json(j.at("feedback"), c.feedback, "train.feedback");
  read(j, "selection_anchor", c.selection_anchor, s);
  read(j, "seed", c.seed, s);
  read(j, "threads", c.threads, s);
  c.validate();
  return c;
}

RolloutConfig rollout_config_from_json(const nlohmann::json& j, RolloutConfig c) {
  constexpr const char* s = "rollout";
  check_keys(j, {"protocol", "fixed_context", "min_context", "anchor_enabled", "anchor_weight",
                 "anchor_jump_cap", "trend_window", "feedback"},
             s);
  if (j.contains("protocol")) c.protocol = protocol_from_string(j.at("protocol").get<std::string>());
  read(j, "fixed_context", c.fixed_context, s);
  read(j, "min_context", c.min_context, s);
  read(j, "anchor_enabled", c.anchor_enabled, s);
  read(j, "anchor_weight", c.anchor_weight, s);
  read(j, "anchor_jump_cap", c.anchor_jump_cap, s);
  read(j, "trend_window", c.trend_window, s);
  if (j.contains("feedback")) c.feedback = feedback_from_json(j.at("feedback"), c.feedback, "rollout.feedback");
  c.validate();
  return c;
}

Standardizer standardizer_from_json(const nlohmann::json& j) {
  try {
    std::vector<Standardizer::Feature> x, tau;
    for (const auto& f : j.at("x")) x.push_back(feature_from_json(f));
    for (const auto& f : j.at("tau")) tau.push_back(feature_from_json(f));
    return Standardizer(std::move(x), std::move(tau), feature_from_json(j.at("target")));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("standardizer: ") + e.what());
  }
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j, {"data", "model", "loss", "train", "rollout", "output_dir"}, "config");
  RunConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, {"cohort", "labels", "split", "split_seed"}, "data");
    read(d, "cohort", c.data.cohort, "data");
    read(d, "labels", c.data.labels, "data");
    read(d, "split_seed", c.data.split_seed, "data");
    if (d.contains("split")) {
      const auto& f = d.at("split");
      check_keys(f, {"train", "val", "test"}, "data.split");
      read(f, "train", c.data.split.train, "data.split");
      read(f, "val", c.data.split.val, "data.split");
      read(f, "test", c.data.split.test, "data.split");
    }
  }
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("loss")) c.loss = loss_weights_from_json(j.at("loss"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("rollout")) c.rollout = rollout_config_from_json(j.at("rollout"));
  read(j, "output_dir", c.output_dir, "config");
  return c;
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return run_config_from_json(read_json_file(path));
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void apply_cohort_dims(ModelConfig& cfg, const CohortDims& dims) {
  cfg.d_x = dims.d_x;
  cfg.d_a_struct = dims.d_a_struct;
  cfg.d_a_comm = dims.d_a_comm;
  cfg.d_tau = dims.d_tau;
  cfg.d_static_in = dims.d_static;
}

std::vector<std::string> load_action_labels(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return j.get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": expected an array of strings (" + e.what() + ")");
  }
}

}  // namespace cmwm
