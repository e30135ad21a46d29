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
#include "ctvseg/disttf.hpp"

#include <cmath>
#include <limits>

namespace ctvseg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform of sampled function f with sample step h:
// d(p) = min_q f(q) + h^2 (p - q)^2. Infinite samples are skipped so that
// parabola intersections stay finite.
void transform_line(const std::vector<double>& f, std::vector<double>& d, double h,
                    std::vector<std::int64_t>& v, std::vector<double>& z) {
  const auto n = static_cast<std::int64_t>(f.size());
  const double h2 = h * h;
  std::int64_t k = -1;
  for (std::int64_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    const double fq = f[q] + h2 * static_cast<double>(q * q);
    double s = -kInf;
    while (k >= 0) {
      const std::int64_t r = v[k];
      const double fr = f[r] + h2 * static_cast<double>(r * r);
      s = (fq - fr) / (2.0 * h2 * static_cast<double>(q - r));
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = (k == 0) ? -kInf : s;
    z[k + 1] = kInf;
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  std::int64_t j = 0;
  for (std::int64_t p = 0; p < n; ++p) {
    while (z[j + 1] < static_cast<double>(p)) ++j;
    const auto diff = static_cast<double>(p - v[j]);
    d[p] = h2 * diff * diff + f[v[j]];
  }
}

}  // namespace

std::vector<double> squared_distance_to_foreground(const Mask& mask) {
  const Shape& s = mask.shape();
  const auto sp = mask.spacing().as_array();
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] ? 0.0 : kInf;

  const std::int64_t max_n = std::max({s.nx, s.ny, s.nz});
  std::vector<double> f(max_n), d(max_n), z(max_n + 1);
  std::vector<std::int64_t> v(max_n);

  const std::array<std::int64_t, 3> stride = {1, s.nx, s.nx * s.ny};
  for (int axis = 0; axis < 3; ++axis) {
    const std::int64_t n = s[axis];
    f.resize(n);
    d.resize(n);
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    for (std::int64_t i2 = 0; i2 < s[a2]; ++i2) {
      for (std::int64_t i1 = 0; i1 < s[a1]; ++i1) {
        const std::int64_t base = i1 * stride[a1] + i2 * stride[a2];
        for (std::int64_t i = 0; i < n; ++i) f[i] = g[base + i * stride[axis]];
        transform_line(f, d, sp[axis], v, z);
        for (std::int64_t i = 0; i < n; ++i) g[base + i * stride[axis]] = d[i];
      }
    }
  }
  return g;
}

Volume distance_target(const Mask& mask) {
  if (count_foreground(mask) == 0) throw DataError("distance_target: empty mask");
  const auto sq = squared_distance_to_foreground(mask);
  Volume out(mask.shape(), mask.spacing());
  for (std::size_t i = 0; i < sq.size(); ++i) out[i] = static_cast<float>(std::sqrt(sq[i]));
  return out;
}

Volume normalize_distance(const Volume& d, double crop_diag_mm) {
  if (!(crop_diag_mm > 0.0)) throw UsageError("normalize_distance: diagonal must be positive");
  Volume out(d.shape(), d.spacing());
  for (std::size_t i = 0; i < d.size(); ++i)
    out[i] = static_cast<float>(std::clamp(static_cast<double>(d[i]) / crop_diag_mm, 0.0, 1.0));
  return out;
}

double physical_diagonal(const Shape& shape, const Spacing& spacing) {
  const double x = static_cast<double>(shape.nx) * spacing.dx;
  const double y = static_cast<double>(shape.ny) * spacing.dy;
  const double z = static_cast<double>(shape.nz) * spacing.dz;
  return std::sqrt(x * x + y * y + z * z);
}

}  // namespace ctvseg
