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
#include <vector>

#include "ctvseg/nets.hpp"
#include "ctvseg/uncertainty.hpp"

namespace ctvseg {

/// T stochastic forward passes of one {C, nz, ny, nx} input with DropBlock
/// active. Sample t uses seed derive_seed(base_seed, t), so any subset or
/// order of indices reproduces the same samples.
McdoStack mcdo_sample(SegNet& net, const torch::Tensor& input, int samples, std::uint64_t base_seed,
                      const Spacing& spacing);
McdoStack mcdo_sample(SegNet& net, const torch::Tensor& input, const std::vector<int>& indices,
                      std::uint64_t base_seed, const Spacing& spacing);

}  // namespace ctvseg
