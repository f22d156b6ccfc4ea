#include "cmwm/objective.hpp"

#include <cmath>

#include "cmwm/errors.hpp"

namespace cmwm {

void LossWeights::validate() const {
  for (double l : {lambda_z, lambda_sig, lambda_slope, lambda_cont, lambda_jump}) {
    if (!(l >= 0.0)) throw ValidationError("loss weights must be >= 0");
  }
  if (!(delta_c > 0.0) || !(delta_j > 0.0)) {
    throw ValidationError("delta_c and delta_j must be > 0");
  }
  if (!(smooth_l1_beta > 0.0)) throw ValidationError("smooth_l1_beta must be > 0");
  if (sigreg_knots < 2) throw ValidationError("sigreg_knots must be >= 2");
  if (sigreg_projections < 1) throw ValidationError("sigreg_projections must be >= 1");
  if (!(sigreg_t_max > 0.0)) throw ValidationError("sigreg_t_max must be > 0");
}

Var loss_supervised(Var y_hat_std, Var y_true_std, double beta) {
  if (y_hat_std.value().empty()) throw ValidationError("loss_supervised on an empty batch");
  return smooth_l1(sub(y_hat_std, y_true_std), beta);
}

Var loss_next_latent(Var z_hat, Var target) {
  const Var diff = sub(z_hat, detach(target));
  return scale(sum(square(diff)), 1.0 / static_cast<double>(z_hat.rows()));
}

std::vector<double> sigreg_grid(std::size_t knots, double t_max) {
  if (knots < 2) throw ValidationError("sigreg grid needs at least 2 knots");
  std::vector<double> grid(knots);
  for (std::size_t k = 0; k < knots; ++k) {
    grid[k] = static_cast<double>(k) * t_max / static_cast<double>(knots - 1);
  }
  return grid;
}

std::vector<double> gaussian_trapezoid_weights(std::span<const double> grid) {
  std::vector<double> w(grid.size());
  if (grid.size() < 2) return w;
  const double dt = grid[1] - grid[0];
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const bool end = k == 0 || k + 1 == grid.size();
    w[k] = (end ? 0.5 * dt : dt) * std::exp(-0.5 * grid[k] * grid[k]);
  }
  return w;
}

Tensor sample_unit_directions(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor dirs(count, dim);
  for (std::size_t q = 0; q < count; ++q) {
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        dirs(q, j) = normal(rng);
        norm2 += dirs(q, j) * dirs(q, j);
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < dim; ++j) dirs(q, j) *= inv;
  }
  return dirs;
}

Var loss_sigreg(Var z_batch, const Tensor& directions, const LossWeights& w,
                const QuadratureWeightFn& weight_fn) {
  const std::size_t n = z_batch.rows();
  if (n < 2) throw ValidationError("loss_sigreg needs at least 2 latents, got " + std::to_string(n));
  if (directions.cols() != z_batch.cols() || directions.rows() == 0) {
    throw ShapeError("loss_sigreg: directions " + directions.shape_string() + " vs latents " +
                     z_batch.value().shape_string());
  }
  Tape& tape = *z_batch.tape();
  const std::vector<double> grid = sigreg_grid(w.sigreg_knots, w.sigreg_t_max);
  const std::vector<double> weights = weight_fn(grid);
  const Var proj = matmul_nt(z_batch, tape.constant(directions));

  Var acc;
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const Var arg = scale(proj, grid[k]);
    const Var c = mean_rows(cos(arg));
    const Var s = mean_rows(sin(arg));
    const double target = std::exp(-0.5 * grid[k] * grid[k]);
    const Var err = add(square(add_scalar(c, -target)), square(s));
    const Var term = scale(sum(err), weights[k]);
    acc = acc.valid() ? add(acc, term) : term;
  }
  const double q = static_cast<double>(directions.rows());
  return scale(acc, static_cast<double>(n) / q);
}

Var loss_sigreg(Var z_batch, std::mt19937_64& rng, const LossWeights& w) {
  const Tensor dirs = sample_unit_directions(w.sigreg_projections, z_batch.cols(), rng);
  return loss_sigreg(z_batch, dirs, w);
}

Var loss_slope(Var y_hat_std, Var y_prev_std, Var y_next_std, double beta) {
  return smooth_l1(sub(sub(y_hat_std, y_prev_std), sub(y_next_std, y_prev_std)), beta);
}

Var loss_continuity(Var y_hat_std, Var y_prev_std, const LossWeights& w) {
  return huber(sub(y_hat_std, y_prev_std), w.delta_c);
}

Var loss_jump(Var y_hat_raw, Var y_prev_raw, const LossWeights& w) {
  return hinge_squared(sub(y_hat_raw, y_prev_raw), w.delta_j);
}

Var total_loss(const LossTerms& t, const LossWeights& w) {
  Var total = t.y;
  total = add(total, scale(t.z, w.lambda_z));
  total = add(total, scale(t.sigreg, w.lambda_sig));
  total = add(total, scale(t.slope, w.lambda_slope));
  total = add(total, scale(t.cont, w.lambda_cont));
  total = add(total, scale(t.jump, w.lambda_jump));
  return total;
}

LossBreakdown total_loss(LossBreakdown c, const LossWeights& w) {
  double total = c.y;
  total += c.z * w.lambda_z;
  total += c.sigreg * w.lambda_sig;
  total += c.slope * w.lambda_slope;
  total += c.cont * w.lambda_cont;
  total += c.jump * w.lambda_jump;
  c.total = total;
  return c;
}

}  // namespace cmwm
