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

#include <cstdint>

#include <torch/torch.h>

namespace ctvseg {

enum class DropMode { Off, Stochastic };

/// Seed-center rate for a map with the given spatial extent, chosen so the
/// expected dropped fraction is 1 - keep_prob.
double dropblock_gamma(double keep_prob, int block_size, const std::vector<std::int64_t>& spatial);

/// DropBlock on a {B, C, spatial...} tensor with 1 or 2 or 3 spatial dims.
/// Seed centers are drawn per (batch, channel) from the Philox stream
/// (seed, stream); block centers only land where the block fits. Survivors
/// are rescaled by count / count_kept.
torch::Tensor dropblock(const torch::Tensor& x, double keep_prob, int block_size, DropMode mode, std::uint64_t seed,
                        std::uint64_t stream);

}  // namespace ctvseg
