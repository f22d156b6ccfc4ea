#include "cmwm/model.hpp"

#include <cmath>

#include "cmwm/errors.hpp"

namespace cmwm {

std::string to_string(ActionEncoderKind kind) {
  return kind == ActionEncoderKind::wide ? "wide" : "split";
}

ActionEncoderKind action_encoder_from_string(std::string_view name) {
  if (name == "wide") return ActionEncoderKind::wide;
  if (name == "split") return ActionEncoderKind::split;
  throw ValidationError("unknown action encoder '" + std::string(name) + "'");
}

void ModelConfig::validate() const {
  const std::pair<const char*, std::size_t> dims[] = {
      {"d_x", d_x},     {"d_a_struct", d_a_struct}, {"d_a_comm", d_a_comm},
      {"d_tau", d_tau}, {"d_static_in", d_static_in}, {"d_b", d_b},
      {"d_z", d_z},     {"d_u", d_u},               {"d_h", d_h},
      {"context_len", context_len}};
  for (const auto& [name, value] : dims) {
    if (value == 0) throw ValidationError(std::string("model config: ") + name + " must be >= 1");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ValidationError("model config: dropout must lie in [0, 1)");
  }
}

ModelConfig ModelConfig::ckd() {
  ModelConfig cfg;
  cfg.d_x = 9;
  cfg.d_a_struct = 62;
  cfg.d_a_comm = 256;
  cfg.d_tau = 6;
  cfg.d_static_in = 52;
  cfg.d_b = 64;
  cfg.d_z = 128;
  cfg.d_u = 128;
  cfg.d_h = 256;
  cfg.dropout = 0.05;
  cfg.context_len = 6;
  return cfg;
}

namespace {

// Builds the parameter layout. When rng is null the tensors are zero-filled
// placeholders that from_params overwrites.
class LayoutBuilder {
 public:
  LayoutBuilder(ParamStore& store, std::mt19937_64* rng) : store_(store), rng_(rng) {}

  CmwmModel::Dense dense(const std::string& name, std::size_t in, std::size_t out) {
    Tensor w(out, in);
    if (rng_ != nullptr) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (std::size_t i = 0; i < w.size(); ++i) w[i] = dist(*rng_);
    }
    CmwmModel::Dense d;
    d.w = store_.add(name + ".weight", std::move(w));
    d.b = store_.add(name + ".bias", Tensor(1, out));
    return d;
  }

  CmwmModel::Mlp mlp(const std::string& name, std::size_t in, std::size_t hidden,
                     std::size_t out) {
    CmwmModel::Mlp m;
    m.hidden = dense(name + ".0", in, hidden);
    m.out = dense(name + ".1", hidden, out);
    return m;
  }

 private:
  ParamStore& store_;
  std::mt19937_64* rng_;
};

CmwmModel::Layout build_layout(const ModelConfig& cfg, ParamStore& store,
                               std::mt19937_64* rng) {
  LayoutBuilder lb(store, rng);
  CmwmModel::Layout l;
  l.static_enc = lb.dense("static_encoder", cfg.d_static_in, cfg.d_b);
  l.state_enc = lb.mlp("state_encoder", cfg.d_x + cfg.d_b, cfg.d_h, cfg.d_z);
  if (cfg.action_encoder == ActionEncoderKind::wide) {
    l.action_enc = lb.mlp("action_encoder", cfg.d_a(), cfg.d_h, cfg.d_u);
  } else {
    l.action_struct_enc = lb.mlp("action_encoder.structured", cfg.d_a_struct, cfg.d_h, cfg.d_u);
    l.action_comm_enc = lb.mlp("action_encoder.communication", cfg.d_a_comm, cfg.d_h, cfg.d_u);
    l.action_proj = lb.dense("action_encoder.projection", 2 * cfg.d_u, cfg.d_u);
  }
  const std::size_t gru_in = cfg.d_z + cfg.d_u + cfg.d_h;
  const auto reset = lb.dense("transition.reset", gru_in, cfg.d_h);
  const auto update = lb.dense("transition.update", gru_in, cfg.d_h);
  const auto cand = lb.dense("transition.candidate", gru_in, cfg.d_h);
  l.transition = {reset.w, reset.b, update.w, update.b, cand.w, cand.b};
  const std::size_t head_in = cfg.d_h + cfg.d_b + cfg.d_tau;
  l.head_target = lb.mlp("head.target", head_in, cfg.d_h, 1);
  l.head_latent = lb.mlp("head.latent", head_in, cfg.d_h, cfg.d_z);
  return l;
}

}  // namespace

CmwmModel CmwmModel::init(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamStore store;
  const Layout layout = build_layout(cfg, store, &rng);
  return CmwmModel(cfg, std::move(store), layout);
}

CmwmModel CmwmModel::from_params(const ModelConfig& cfg, ParamStore params) {
  cfg.validate();
  ParamStore expected;
  const Layout layout = build_layout(cfg, expected, nullptr);
  if (expected.size() != params.size()) {
    throw ShapeError("parameter store has " + std::to_string(params.size()) +
                     " tensors, config expects " + std::to_string(expected.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (expected.name(i) != params.name(i) || !expected[i].same_shape(params[i])) {
      throw ShapeError("parameter '" + params.name(i) + "' " + params[i].shape_string() +
                       " does not match expected '" + expected.name(i) + "' " +
                       expected[i].shape_string());
    }
  }
  return CmwmModel(cfg, std::move(params), layout);
}

// ---------------------------------------------------------------- ModelGraph

ModelGraph::ModelGraph(const CmwmModel& model, Tape& tape, Mode mode, std::mt19937_64* rng)
    : model_(model), tape_(tape), mode_(mode), rng_(rng) {
  if (mode == Mode::train && model.config().dropout > 0.0 && rng == nullptr) {
    throw Error("train mode with dropout requires an rng");
  }
  tape_.bind(model_.params());
}

Var ModelGraph::row(std::span<const double> v, std::size_t expected, const char* what) {
  if (v.size() != expected) {
    throw ShapeError(std::string(what) + ": expected dimension " + std::to_string(expected) +
                     ", got " + std::to_string(v.size()));
  }
  return tape_.constant(Tensor::row(v));
}

Var ModelGraph::dense(const CmwmModel::Dense& d, Var x) {
  return affine(x, tape_.param(d.w), tape_.param(d.b));
}

Var ModelGraph::mlp(const CmwmModel::Mlp& m, Var x) {
  Var hidden = gelu(dense(m.hidden, x));
  if (mode_ == Mode::train) hidden = dropout(hidden, model_.config().dropout, *rng_);
  return dense(m.out, hidden);
}

Var ModelGraph::encode_static(std::span<const double> static_raw) {
  const auto& cfg = model_.config();
  return gelu(dense(model_.layout().static_enc, row(static_raw, cfg.d_static_in, "static")));
}

Var ModelGraph::encode_state(Var x_std, Var b) {
  const auto& cfg = model_.config();
  if (x_std.rows() != 1 || x_std.cols() != cfg.d_x) {
    throw ShapeError("state: expected 1x" + std::to_string(cfg.d_x) + ", got " +
                     x_std.value().shape_string());
  }
  return mlp(model_.layout().state_enc, concat_cols({x_std, b}));
}

Var ModelGraph::encode_action(std::span<const double> a_struct, std::span<const double> a_comm) {
  const auto& cfg = model_.config();
  const auto& l = model_.layout();
  const Var s = row(a_struct, cfg.d_a_struct, "a_struct");
  const Var c = row(a_comm, cfg.d_a_comm, "a_comm");
  if (cfg.action_encoder == ActionEncoderKind::wide) return mlp(l.action_enc, concat_cols({s, c}));
  const Var us = mlp(l.action_struct_enc, s);
  const Var uc = mlp(l.action_comm_enc, c);
  return dense(l.action_proj, concat_cols({us, uc}));
}

Var ModelGraph::initial_hidden() { return tape_.constant(Tensor(1, model_.config().d_h)); }

Var ModelGraph::transition(Var h_prev, Var z, Var u) {
  const auto& g = model_.layout().transition;
  const GruWeights w{tape_.param(g.reset_w),  tape_.param(g.reset_b),
                     tape_.param(g.update_w), tape_.param(g.update_b),
                     tape_.param(g.cand_w),   tape_.param(g.cand_b)};
  return gru_step(h_prev, concat_cols({z, u}), w);
}

HeadOutput ModelGraph::predict_head(Var h, Var b, std::span<const double> tau_std) {
  const auto& cfg = model_.config();
  const Var in = concat_cols({h, b, row(tau_std, cfg.d_tau, "tau")});
  return {mlp(model_.layout().head_target, in), mlp(model_.layout().head_latent, in)};
}

}  // namespace cmwm
