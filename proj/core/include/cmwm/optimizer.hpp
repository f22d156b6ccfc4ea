#pragma once

// AdamW with decoupled weight decay and optional global-norm clipping.

#include <vector>

#include "cmwm/diffcore.hpp"

namespace cmwm {

struct AdamWConfig {
  double lr = 6e-4;
  double weight_decay = 8e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  // Global L2 norm cap on the gradient; <= 0 disables clipping.
  double grad_clip_norm = 1.0;

  void validate() const;
  friend bool operator==(const AdamWConfig&, const AdamWConfig&) = default;
};

double global_norm(const std::vector<Tensor>& grads);
// Rescales in place so the global norm is at most max_norm; returns the norm
// before clipping.
double clip_global_norm(std::vector<Tensor>& grads, double max_norm);

class AdamW {
 public:
  AdamW(const ParamStore& params, AdamWConfig cfg);

  // Per parameter, with bias-corrected moments m^, v^:
  //   p <- p - lr (m^ / (sqrt(v^) + eps) + wd p)
  // Returns the gradient norm before clipping.
  double step(ParamStore& params, std::vector<Tensor> grads);

  std::size_t steps() const noexcept { return t_; }
  const std::vector<Tensor>& first_moments() const noexcept { return m_; }
  const std::vector<Tensor>& second_moments() const noexcept { return v_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace cmwm
