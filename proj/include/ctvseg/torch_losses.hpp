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

#include <torch/torch.h>

#include "ctvseg/losses.hpp"
#include "ctvseg/nets.hpp"

namespace ctvseg {

// Tensor losses over {B, C, spatial...} inputs. Each (sample, channel) pair is
// one Dice term; terms are averaged over the batch and summed over channels.
// Backward passes use the closed-form gradients of the array losses.

torch::Tensor dice_loss(const torch::Tensor& p, const torch::Tensor& q, const torch::Tensor& w = {});
torch::Tensor sqrt_dice_loss(const torch::Tensor& p, const torch::Tensor& q, double epsilon = LossConfig{}.epsilon);

struct CtvTargets {
  torch::Tensor truth;    // {B, 1, spatial...} binary
  torch::Tensor weights;  // boundary weight map, same shape
  torch::Tensor dist;     // normalized distance target; undefined for single-task variants
};

struct CtvLossTerms {
  torch::Tensor total;
  double main = 0.0, aux1 = 0.0, aux2 = 0.0, dist = 0.0;
};

/// Boundary-weighted Dice on the main head, plain Dice on both deep-supervision
/// heads, plus MSE on the distance head when present. Unit weights.
CtvLossTerms composite_ctv_loss(const NetOutputs& out, const CtvTargets& t);

}  // namespace ctvseg
