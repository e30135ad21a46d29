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

#include <cstring>

#include <torch/torch.h>

#include "ctvseg/volcore.hpp"

namespace ctvseg {

// Volumes map to {nz, ny, nx} tensors without reordering (x-fastest storage).
inline torch::Tensor to_tensor(const Volume& v) {
  const Shape& s = v.shape();
  return torch::from_blob(const_cast<float*>(v.raw().data()), {s.nz, s.ny, s.nx}, torch::kFloat32).clone();
}

inline torch::Tensor to_tensor(const Mask& m) {
  const Shape& s = m.shape();
  return torch::from_blob(const_cast<std::uint8_t*>(m.raw().data()), {s.nz, s.ny, s.nx}, torch::kUInt8)
      .to(torch::kFloat32);
}

// t holds nz*ny*nx values in {nz, ny, nx} order (leading singleton dims allowed).
inline Volume to_volume(const torch::Tensor& t, const Shape& shape, const Spacing& spacing) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  if (c.numel() != static_cast<std::int64_t>(shape.count())) throw DataError("tensor does not match volume shape");
  Volume v(shape, spacing);
  std::memcpy(v.raw().data(), c.data_ptr<float>(), v.size() * sizeof(float));
  return v;
}

}  // namespace ctvseg
