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
#include "ctvseg/mcdo.hpp"

#include "ctvseg/error.hpp"
#include "ctvseg/rng.hpp"
#include "ctvseg/tensor_util.hpp"

namespace ctvseg {

McdoStack mcdo_sample(SegNet& net, const torch::Tensor& input, const std::vector<int>& indices,
                      std::uint64_t base_seed, const Spacing& spacing) {
  const auto& m = net->manifest();
  if (std::none_of(m.begin(), m.end(), [](const std::string& l) { return l.find("DropBlock") != std::string::npos; }))
    throw UsageError("mcdo_sample: network has no stochastic layers");
  if (indices.empty()) throw UsageError("mcdo_sample: need at least one sample");
  if (input.dim() != 4) throw DataError("mcdo_sample: expected a {C, nz, ny, nx} input");
  const Shape shape{input.size(3), input.size(2), input.size(1)};
  torch::NoGradGuard guard;
  net->eval();
  McdoStack stack;
  stack.config_hash = net->config().hash();
  const auto batch = input.unsqueeze(0);
  for (int t : indices) {
    const std::uint64_t seed = derive_seed(base_seed, static_cast<std::uint64_t>(t));
    stack.samples.push_back(to_volume(net->forward(batch, {true, seed}).main, shape, spacing));
    stack.seeds.push_back(seed);
  }
  return stack;
}

McdoStack mcdo_sample(SegNet& net, const torch::Tensor& input, int samples, std::uint64_t base_seed,
                      const Spacing& spacing) {
  if (samples < 1) throw UsageError("mcdo_sample: need at least one sample");
  std::vector<int> idx(static_cast<std::size_t>(samples));
  for (int t = 0; t < samples; ++t) idx[static_cast<std::size_t>(t)] = t;
  return mcdo_sample(net, input, idx, base_seed, spacing);
}

}  // namespace ctvseg
