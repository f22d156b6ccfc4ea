#include "cmwm/optimizer.hpp"

#include <cmath>

#include "cmwm/errors.hpp"

namespace cmwm {

void AdamWConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("lr must be > 0");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("eps must be > 0");
}

double global_norm(const std::vector<Tensor>& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double v : g.values()) sq += v * v;
  return std::sqrt(sq);
}

double clip_global_norm(std::vector<Tensor>& grads, double max_norm) {
  const double norm = global_norm(grads);
  if (max_norm > 0.0 && norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads)
      for (double& v : g.values()) v *= factor;
  }
  return norm;
}

AdamW::AdamW(const ParamStore& params, AdamWConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].rows(), params[i].cols());
    v_.emplace_back(params[i].rows(), params[i].cols());
  }
}

double AdamW::step(ParamStore& params, std::vector<Tensor> grads) {
  if (grads.size() != params.size()) throw ShapeError("AdamW: one gradient per parameter expected");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(params[i])) {
      throw ShapeError("AdamW: gradient shape " + grads[i].shape_string() + " for parameter '" +
                       params.name(i) + "' of shape " + params[i].shape_string());
    }
  }
  const double norm = clip_global_norm(grads, cfg_.grad_clip_norm);
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].values();
    auto g = grads[i].values();
    auto m = m_[i].values();
    auto v = v_[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= cfg_.lr * (m_hat / (std::sqrt(v_hat) + cfg_.eps) + cfg_.weight_decay * p[j]);
    }
  }
  return norm;
}

}  // namespace cmwm
