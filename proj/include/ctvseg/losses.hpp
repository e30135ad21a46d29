/*
 * Copyright 2026 The ctvseg Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include <span>
#include <vector>

#include "ctvseg/volcore.hpp"

namespace ctvseg {

// Added to Dice denominators so empty crops do not divide 0 by 0.
inline constexpr double kDiceSmoothing = 1e-7;
// Predictions are clamped to [kProbClamp, 1 - kProbClamp] inside the weighted Dice loss.
inline constexpr double kProbClamp = 1e-7;

struct LossConfig {
  double epsilon = 1e-6;
  double boundary_weight = 0.8;
  double interior_weight = 0.2;
};

/// Flat prediction/target/weight triple. All three have the same length; q is
/// binary; w is strictly positive. An empty w means w ≡ 1.
struct LossBatch {
  std::vector<double> p;
  std::vector<double> q;
  std::vector<double> w;

  void validate() const;
  double weight(std::size_t i) const { return w.empty() ? 1.0 : w[i]; }
};

/// Negative weighted soft Dice:
///   -2 Σ w p q / (Σ w p + Σ w q + s)
double dice_loss(const LossBatch& b);
/// d(dice_loss)/dp_j = -2 w_j (q_j D - Σ w p q) / D^2 with D the smoothed
/// denominator. Reduces to the unweighted quotient-rule form when w ≡ 1.
std::vector<double> dice_loss_grad(const LossBatch& b);

/// Square-root Dice variant that favors sensitivity (weights ignored):
///   -2 Σ sqrt(p+ε) q / (Σ sqrt(p+ε) + Σ q)
double sqrt_dice_loss(const LossBatch& b, double epsilon);
/// Carries the extra (p_j+ε)^(-1/2) factor that inflates gradients on missed
/// foreground voxels.
std::vector<double> sqrt_dice_loss_grad(const LossBatch& b, double epsilon);

/// boundary_weight on voxels whose 6-neighborhood holds both labels (both
/// sides of the interface), interior_weight elsewhere.
Volume boundary_weight_map(const Mask& mask, const LossConfig& cfg = {});

double mse_loss(std::span<const double> pred, std::span<const double> target);
std::vector<double> mse_loss_grad(std::span<const double> pred, std::span<const double> target);

struct CompositeLoss {
  double value = 0.0;
  double main_dice = 0.0;
  double aux1_dice = 0.0;
  double aux2_dice = 0.0;
  double distance_mse = 0.0;
  std::vector<double> grad_main, grad_aux1, grad_aux2, grad_dist;
};

/// Four-term CTV objective with unit combination weights: boundary-weighted
/// Dice on the main head, plain Dice on both deep-supervision heads, MSE on the
/// distance head. Aux predictions must already be at truth resolution.
CompositeLoss composite_ctv_loss(std::span<const double> main_pred, std::span<const double> aux1_pred,
                                 std::span<const double> aux2_pred, std::span<const double> dist_pred,
                                 const Mask& truth, std::span<const double> dist_target, const LossConfig& cfg = {});

}  // namespace ctvseg
