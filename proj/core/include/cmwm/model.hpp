#pragma once

// Action-conditioned latent world model.
//
//   b   = B(static)                    static encoder, affine + GELU
//   z_t = E_s([x~_t; b])               state encoder, 2-layer MLP
//   u_t = E_a([a_struct; a_comm])      action encoder (wide or split)
//   h_t = G(h_{t-1}, [z_t; u_t])       GRU transition
//   y^_{t+1} = H_y([h_t; b; tau~_{t+1}])   target head, 2-layer MLP -> 1
//   z^_{t+1} = H_z([h_t; b; tau~_{t+1}])   latent head, 2-layer MLP -> d_z

#include <cstdint>
#include <random>
#include <string>

#include "cmwm/diffcore.hpp"

namespace cmwm {

enum class ActionEncoderKind {
  // One MLP over the concatenated action vector.
  wide,
  // Separate structured/communication MLPs, concatenated and projected to d_u.
  split,
};

std::string to_string(ActionEncoderKind kind);
ActionEncoderKind action_encoder_from_string(std::string_view name);

struct ModelConfig {
  std::size_t d_x = 9;
  std::size_t d_a_struct = 62;
  std::size_t d_a_comm = 256;
  std::size_t d_tau = 6;
  std::size_t d_static_in = 52;
  std::size_t d_b = 64;
  std::size_t d_z = 128;
  std::size_t d_u = 128;
  std::size_t d_h = 256;
  double dropout = 0.05;
  // Number of most recent observed periods used to warm up the GRU.
  std::size_t context_len = 6;
  std::uint64_t seed = 0;
  ActionEncoderKind action_encoder = ActionEncoderKind::wide;

  std::size_t d_a() const noexcept { return d_a_struct + d_a_comm; }
  // Throws ValidationError on a zero dimension or dropout outside [0, 1).
  void validate() const;

  // The chronic-kidney-disease instantiation: 9 state dims, 62 + 256 action
  // dims, 6 target-time dims, sex one-hot plus 50 pathology categories.
  static ModelConfig ckd();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

enum class Mode { train, eval };

class CmwmModel {
 public:
  // Deterministic in cfg.seed: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
  // biases zero.
  static CmwmModel init(const ModelConfig& cfg);
  // Rebuilds the layout for cfg and adopts stored tensors; throws ShapeError
  // when names or shapes disagree.
  static CmwmModel from_params(const ModelConfig& cfg, ParamStore params);

  const ModelConfig& config() const noexcept { return cfg_; }
  const ParamStore& params() const noexcept { return params_; }
  ParamStore& params() noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.parameter_count(); }

  struct Dense {
    std::size_t w = 0, b = 0;
  };
  struct Mlp {
    Dense hidden, out;
  };
  struct Gru {
    std::size_t reset_w = 0, reset_b = 0, update_w = 0, update_b = 0, cand_w = 0, cand_b = 0;
  };
  struct Layout {
    Dense static_enc;
    Mlp state_enc;
    Mlp action_enc;         // wide variant
    Mlp action_struct_enc;  // split variant
    Mlp action_comm_enc;    // split variant
    Dense action_proj;      // split variant
    Gru transition;
    Mlp head_target;
    Mlp head_latent;
  };
  const Layout& layout() const noexcept { return layout_; }

 private:
  CmwmModel(ModelConfig cfg, ParamStore params, Layout layout)
      : cfg_(cfg), params_(std::move(params)), layout_(layout) {}

  ModelConfig cfg_;
  ParamStore params_;
  Layout layout_;
};

struct HeadOutput {
  Var y_hat;   // 1 x 1, standardised target units
  Var z_hat;   // 1 x d_z
};

// Binds a model to a tape for one forward computation. Dropout draws from
// `rng` in train mode and is disabled in eval mode.
class ModelGraph {
 public:
  ModelGraph(const CmwmModel& model, Tape& tape, Mode mode, std::mt19937_64* rng = nullptr);

  const CmwmModel& model() const noexcept { return model_; }
  Tape& tape() noexcept { return tape_; }
  Mode mode() const noexcept { return mode_; }

  Var encode_static(std::span<const double> static_raw);
  Var encode_state(Var x_std, Var b);
  Var encode_action(std::span<const double> a_struct, std::span<const double> a_comm);
  Var initial_hidden();
  Var transition(Var h_prev, Var z, Var u);
  HeadOutput predict_head(Var h, Var b, std::span<const double> tau_std);

 private:
  Var dense(const CmwmModel::Dense& d, Var x);
  Var mlp(const CmwmModel::Mlp& m, Var x);
  Var row(std::span<const double> v, std::size_t expected, const char* what);

  const CmwmModel& model_;
  Tape& tape_;
  Mode mode_;
  std::mt19937_64* rng_;
};

}  // namespace cmwm
