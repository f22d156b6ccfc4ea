#pragma once

// Six-term training objective:
//   L = L_y + lz L_z + lsig L_sigreg + lslope L_slope + lc L_cont + lj L_jump

#include <functional>
#include <random>
#include <vector>

#include "cmwm/diffcore.hpp"

namespace cmwm {

struct LossWeights {
  double lambda_z = 0.08;
  double lambda_sig = 0.008;
  double lambda_slope = 0.2;
  double lambda_cont = 0.3;
  double lambda_jump = 0.2;
  double delta_c = 0.5;   // standardised target units
  double delta_j = 10.0;  // raw target units
  double smooth_l1_beta = 1.0;
  std::size_t sigreg_knots = 17;
  double sigreg_t_max = 3.0;
  std::size_t sigreg_projections = 64;
  // Pool predicted next latents with encoded latents in the SIGReg batch.
  bool sigreg_include_predicted = true;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossBreakdown {
  double y = 0.0;
  double z = 0.0;
  double sigreg = 0.0;
  double slope = 0.0;
  double cont = 0.0;
  double jump = 0.0;
  double total = 0.0;
};

// Differentiable per-term values produced on a tape.
struct LossTerms {
  Var y, z, sigreg, slope, cont, jump;
};

// Mean SmoothL1(y_hat - y_true). Inputs are 1 x n in standardised units.
Var loss_supervised(Var y_hat_std, Var y_true_std, double beta = 1.0);

// Mean over rows of ||z_hat - sg(target)||^2; no gradient reaches `target`.
Var loss_next_latent(Var z_hat, Var target);

// Uniform grid t_k = k T_max / (K - 1), k = 0..K-1.
std::vector<double> sigreg_grid(std::size_t knots, double t_max);

using QuadratureWeightFn = std::function<std::vector<double>(std::span<const double> grid)>;

// Trapezoid weights on a uniform grid (dt/2 at the ends, dt inside), each
// multiplied by the Gaussian window exp(-t^2 / 2).
std::vector<double> gaussian_trapezoid_weights(std::span<const double> grid);

// Q x d matrix of directions drawn uniformly on the unit sphere.
Tensor sample_unit_directions(std::size_t count, std::size_t dim, std::mt19937_64& rng);

// Characteristic-function isotropy penalty of an N x d latent batch:
//   (N/Q) sum_q sum_k w_k [(C_q(t_k) - exp(-t_k^2/2))^2 + S_q(t_k)^2]
// with C_q, S_q the empirical cosine/sine means of the projections z.q.
// Throws ValidationError for N < 2.
Var loss_sigreg(Var z_batch, const Tensor& directions, const LossWeights& w,
                const QuadratureWeightFn& weight_fn = gaussian_trapezoid_weights);
// Draws w.sigreg_projections fresh directions from rng.
Var loss_sigreg(Var z_batch, std::mt19937_64& rng, const LossWeights& w);

// Mean SmoothL1((y_hat - y_prev) - (y_next - y_prev)).
Var loss_slope(Var y_hat_std, Var y_prev_std, Var y_next_std, double beta = 1.0);
// Mean Huber_{delta_c}(y_hat - y_prev).
Var loss_continuity(Var y_hat_std, Var y_prev_std, const LossWeights& w);
// Mean max(0, |y_hat - y_prev| - delta_j)^2 in raw units.
Var loss_jump(Var y_hat_raw, Var y_prev_raw, const LossWeights& w);

// y + lz z + lsig sigreg + lslope slope + lc cont + lj jump, summed left to right.
Var total_loss(const LossTerms& terms, const LossWeights& w);
// Same combination on plain values; fills `total`.
LossBreakdown total_loss(LossBreakdown components, const LossWeights& w);

}  // namespace cmwm
