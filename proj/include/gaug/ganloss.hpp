#pragma once

// Adversarial and cycle-consistency objectives for CycleGAN training.
//
// Discriminators emit raw scores. The least-squares losses use them as is;
// only the log-loss variant (kept for comparison) squashes them with a
// sigmoid. Expectations are minibatch means over the leading axis.

#include "gaug/ops.hpp"

namespace gaug {

/// Discriminator outputs on one minibatch of real and generated samples.
struct BatchScores {
  Tensor real_scores;
  Tensor fake_scores;
};

/// Originals and their round-trip reconstructions, F(G(r)) and G(F(t)).
struct CycleBatch {
  Tensor originals_r;
  Tensor reconstructed_r;
  Tensor originals_t;
  Tensor reconstructed_t;
};

struct LossWeights {
  double lambda_cyc = 10.0;
};

/// Minimax log loss E[log D(t)] + E[log(1 - D(G(r)))] with D = sigmoid(score).
/// Not used for training; saturates when fake scores are very negative.
inline Tensor adv_log_loss(const BatchScores& scores) {
  const Tensor real_term = mean(log_sigmoid(scores.real_scores));
  // log(1 - sigmoid(s)) == log(sigmoid(-s))
  const Tensor fake_term = mean(log_sigmoid(scale(scores.fake_scores, -1.0)));
  return add(real_term, fake_term);
}

/// Discriminator objective E[(D(real) - 1)^2] + E[D(fake)^2].
inline Tensor lsgan_d_loss(const BatchScores& scores) {
  return add(mean(square(add_scalar(scores.real_scores, -1.0))), mean(square(scores.fake_scores)));
}

/// Generator objective E[(D(G(x)) - 1)^2].
inline Tensor lsgan_g_loss(const Tensor& fake_scores) { return mean(square(add_scalar(fake_scores, -1.0))); }

/// E[||F(G(r)) - r||_1] + E[||G(F(t)) - t||_1]; L1 over every coordinate of a
/// sample, mean over the batch axis.
inline Tensor cycle_loss(const CycleBatch& batch) {
  detail::require_same_shape("cycle_loss(r)", batch.originals_r, batch.reconstructed_r);
  detail::require_same_shape("cycle_loss(t)", batch.originals_t, batch.reconstructed_t);
  const double n_r = static_cast<double>(batch.originals_r.dim(0));
  const double n_t = static_cast<double>(batch.originals_t.dim(0));
  const Tensor r_term = scale(reduce(sub(batch.reconstructed_r, batch.originals_r), Reduction::L1), 1.0 / n_r);
  const Tensor t_term = scale(reduce(sub(batch.reconstructed_t, batch.originals_t), Reduction::L1), 1.0 / n_t);
  return add(r_term, t_term);
}

/// L_R + L_T + lambda * L_cyc.
inline Tensor total_loss(const Tensor& loss_r, const Tensor& loss_t, const Tensor& cyc, const LossWeights& weights) {
  if (loss_r.size() != 1 || loss_t.size() != 1 || cyc.size() != 1) {
    throw ContractError("total_loss: components must be scalars");
  }
  if (weights.lambda_cyc < 0) throw ParameterError("total_loss: lambda_cyc must be >= 0");
  return add(add(loss_r, loss_t), scale(cyc, weights.lambda_cyc));
}

}  // namespace gaug
