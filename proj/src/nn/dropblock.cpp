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
#include "ctvseg/dropblock.hpp"

#include "ctvseg/error.hpp"
#include "ctvseg/rng.hpp"

namespace ctvseg {

double dropblock_gamma(double keep_prob, int block_size, const std::vector<std::int64_t>& spatial) {
  double total = 1.0, valid = 1.0, area = 1.0;
  for (auto n : spatial) {
    total *= static_cast<double>(n);
    valid *= static_cast<double>(n - block_size + 1);
    area *= block_size;
  }
  return (1.0 - keep_prob) / area * total / valid;
}

torch::Tensor dropblock(const torch::Tensor& x, double keep_prob, int block_size, DropMode mode, std::uint64_t seed,
                        std::uint64_t stream) {
  const auto dims = x.dim() - 2;
  if (dims < 1 || dims > 3) throw UsageError("dropblock: expected 1 to 3 spatial dims");
  if (block_size < 1 || block_size % 2 == 0) throw UsageError("dropblock: block_size must be odd and positive");
  if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw UsageError("dropblock: keep_prob must be in (0, 1]");
  std::vector<std::int64_t> spatial(x.sizes().begin() + 2, x.sizes().end());
  for (auto n : spatial)
    if (block_size > n) throw UsageError("dropblock: block_size exceeds the feature map");
  if (mode == DropMode::Off || keep_prob >= 1.0) return x;

  const double gamma = dropblock_gamma(keep_prob, block_size, spatial);
  const int h = block_size / 2;
  auto seeds = torch::zeros(x.sizes(), torch::kFloat32);
  float* sp = seeds.data_ptr<float>();
  Rng rng(seed, stream);
  const std::int64_t maps = x.size(0) * x.size(1);
  std::vector<std::int64_t> n(3, 1);
  for (std::size_t a = 0; a < spatial.size(); ++a) n[3 - spatial.size() + a] = spatial[a];
  // n = {depth, height, width}, padded with leading ones.
  std::vector<std::int64_t> lo(3, 0), hi(3, 1);
  for (int a = 0; a < 3; ++a) {
    const bool active = a >= 3 - static_cast<int>(spatial.size());
    lo[a] = active ? h : 0;
    hi[a] = active ? n[a] - h : 1;
  }
  const std::int64_t per_map = n[0] * n[1] * n[2];
  for (std::int64_t m = 0; m < maps; ++m)
    for (std::int64_t k = lo[0]; k < hi[0]; ++k)
      for (std::int64_t j = lo[1]; j < hi[1]; ++j)
        for (std::int64_t i = lo[2]; i < hi[2]; ++i)
          if (rng.uniform() < gamma) sp[m * per_map + (k * n[1] + j) * n[2] + i] = 1.0f;

  torch::Tensor blocks;
  if (dims == 1) blocks = torch::max_pool1d(seeds, block_size, 1, h);
  else if (dims == 2) blocks = torch::max_pool2d(seeds, block_size, 1, h);
  else blocks = torch::max_pool3d(seeds, block_size, 1, h);
  auto keep = (1.0f - blocks).to(x.device());
  const double kept = keep.sum().item<double>();
  if (kept <= 0.0) return x * keep;
  return x * keep * static_cast<float>(static_cast<double>(keep.numel()) / kept);
}

}  // namespace ctvseg
