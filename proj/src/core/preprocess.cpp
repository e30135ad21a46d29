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
#include "ctvseg/preprocess.hpp"

#include <cmath>
#include <numbers>

namespace ctvseg {

void AheParams::validate() const {
  if (tiles_x < 1 || tiles_y < 1) throw UsageError("ahe: tile grid must be at least 1x1");
  if (!(clip_limit > 0.0)) throw UsageError("ahe: clip_limit must be positive");
  if (bins < 2) throw UsageError("ahe: need at least 2 bins");
}

namespace {

int bin_of(float v, float lo, float hi, int bins) {
  const double t = (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo);
  return std::clamp(static_cast<int>(t * bins), 0, bins - 1);
}

}  // namespace

std::vector<double> ahe_tile_mapping(std::span<const float> tile_values, float lo, float hi, const AheParams& p) {
  p.validate();
  std::vector<double> map(static_cast<std::size_t>(p.bins));
  const auto [tmin, tmax] = std::minmax_element(tile_values.begin(), tile_values.end());
  if (tile_values.empty() || *tmin == *tmax || hi <= lo) {
    for (int b = 0; b < p.bins; ++b) map[b] = (b + 0.5) / p.bins;
    return map;
  }
  std::vector<double> hist(static_cast<std::size_t>(p.bins), 0.0);
  for (float v : tile_values) hist[bin_of(v, lo, hi, p.bins)] += 1.0;
  const double n = static_cast<double>(tile_values.size());
  const double cap = std::max(p.clip_limit * n, 1.0);
  double excess = 0.0;
  for (double& h : hist) {
    if (h > cap) {
      excess += h - cap;
      h = cap;
    }
  }
  const double share = excess / p.bins;
  double acc = 0.0;
  for (int b = 0; b < p.bins; ++b) {
    acc += hist[b] + share;
    map[b] = std::min(acc / n, 1.0);
  }
  return map;
}

Volume ahe(const Volume& v, const AheParams& p) {
  p.validate();
  const Shape& s = v.shape();
  Volume out(s, v.spacing(), 0.0f);
  const auto [mn, mx] = std::minmax_element(v.raw().begin(), v.raw().end());
  const float lo = *mn;
  const float hi = *mx;
  if (hi <= lo) return out;

  const int tx = static_cast<int>(std::min<std::int64_t>(p.tiles_x, s.nx));
  const int ty = static_cast<int>(std::min<std::int64_t>(p.tiles_y, s.ny));
  std::vector<std::int64_t> bx(tx + 1), by(ty + 1);
  for (int i = 0; i <= tx; ++i) bx[i] = i * s.nx / tx;
  for (int j = 0; j <= ty; ++j) by[j] = j * s.ny / ty;
  std::vector<double> cx(tx), cy(ty);
  for (int i = 0; i < tx; ++i) cx[i] = 0.5 * static_cast<double>(bx[i] + bx[i + 1] - 1);
  for (int j = 0; j < ty; ++j) cy[j] = 0.5 * static_cast<double>(by[j] + by[j + 1] - 1);

  // Neighboring tile pair and blend weight for a coordinate.
  auto locate = [](const std::vector<double>& centers, double c, int& i0, int& i1, double& t) {
    const int n = static_cast<int>(centers.size());
    if (c <= centers.front()) {
      i0 = i1 = 0;
      t = 0.0;
      return;
    }
    if (c >= centers.back()) {
      i0 = i1 = n - 1;
      t = 0.0;
      return;
    }
    i0 = 0;
    while (i0 + 1 < n && centers[i0 + 1] <= c) ++i0;
    i1 = std::min(i0 + 1, n - 1);
    t = (i1 == i0) ? 0.0 : (c - centers[i0]) / (centers[i1] - centers[i0]);
  };

  std::vector<std::vector<double>> maps(static_cast<std::size_t>(tx * ty));
  std::vector<float> tile;
  for (std::int64_t z = 0; z < s.nz; ++z) {
    for (int j = 0; j < ty; ++j)
      for (int i = 0; i < tx; ++i) {
        tile.clear();
        for (std::int64_t y = by[j]; y < by[j + 1]; ++y)
          for (std::int64_t x = bx[i]; x < bx[i + 1]; ++x) tile.push_back(v(x, y, z));
        maps[j * tx + i] = ahe_tile_mapping(tile, lo, hi, p);
      }
    for (std::int64_t y = 0; y < s.ny; ++y) {
      int j0, j1;
      double ty_w;
      locate(cy, static_cast<double>(y), j0, j1, ty_w);
      for (std::int64_t x = 0; x < s.nx; ++x) {
        int i0, i1;
        double tx_w;
        locate(cx, static_cast<double>(x), i0, i1, tx_w);
        const int b = bin_of(v(x, y, z), lo, hi, p.bins);
        const double m00 = maps[j0 * tx + i0][b];
        const double m10 = maps[j0 * tx + i1][b];
        const double m01 = maps[j1 * tx + i0][b];
        const double m11 = maps[j1 * tx + i1][b];
        const double top = (1.0 - tx_w) * m00 + tx_w * m10;
        const double bot = (1.0 - tx_w) * m01 + tx_w * m11;
        out(x, y, z) = static_cast<float>(std::clamp((1.0 - ty_w) * top + ty_w * bot, 0.0, 1.0));
      }
    }
  }
  return out;
}

std::array<double, 3> centroid(const Mask& mask) {
  std::array<double, 3> sum{0.0, 0.0, 0.0};
  std::size_t n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const Index3 idx = mask.index_of(i);
    sum[0] += static_cast<double>(idx.x);
    sum[1] += static_cast<double>(idx.y);
    sum[2] += static_cast<double>(idx.z);
    ++n;
  }
  if (n == 0) throw DataError("centroid: empty mask (localization failed)");
  for (double& c : sum) c /= static_cast<double>(n);
  return sum;
}

void AugmentParams::validate() const {
  if (!(max_rotation_deg > 0.0 && max_rotation_deg <= 10.0)) throw UsageError("augment: rotation bound must be in (0, 10] degrees");
  if (!(scale_min > 0.0 && scale_min <= 1.0 && scale_max >= 1.0)) throw UsageError("augment: scale range must bracket 1.0");
}

AugmentTransform sample_augment(const AugmentParams& params, Rng& rng) {
  params.validate();
  AugmentTransform t;
  // Open interval keeps |angle| strictly below the bound.
  t.angle_deg = params.max_rotation_deg * (2.0 * rng.uniform_open() - 1.0);
  t.scale = rng.uniform(params.scale_min, params.scale_max);
  t.flip = params.flip_x && rng.bernoulli(0.5);
  return t;
}

namespace {

// Maps an output in-plane position to the input position it samples.
struct InverseMap {
  double cx, cy, cos_a, sin_a, inv_scale;
  bool flip;

  std::pair<double, double> operator()(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    // Undo scale and rotation, then flip.
    double ix = (cos_a * dx + sin_a * dy) * inv_scale;
    const double iy = (-sin_a * dx + cos_a * dy) * inv_scale;
    if (flip) ix = -ix;
    return {cx + ix, cy + iy};
  }
};

InverseMap make_inverse(const Shape& s, const AugmentTransform& t) {
  const double a = t.angle_deg * std::numbers::pi / 180.0;
  return {0.5 * static_cast<double>(s.nx - 1), 0.5 * static_cast<double>(s.ny - 1), std::cos(a), std::sin(a),
          1.0 / t.scale, t.flip};
}

}  // namespace

Volume apply_transform(const Volume& v, const AugmentTransform& t) {
  const Shape& s = v.shape();
  const float fill = *std::min_element(v.raw().begin(), v.raw().end());
  Volume out(s, v.spacing(), fill);
  const InverseMap inv = make_inverse(s, t);
  const double eps = 1e-9;
  for (std::int64_t y = 0; y < s.ny; ++y)
    for (std::int64_t x = 0; x < s.nx; ++x) {
      auto [ix, iy] = inv(static_cast<double>(x), static_cast<double>(y));
      if (ix < -eps || iy < -eps || ix > static_cast<double>(s.nx - 1) + eps || iy > static_cast<double>(s.ny - 1) + eps)
        continue;
      ix = std::clamp(ix, 0.0, static_cast<double>(s.nx - 1));
      iy = std::clamp(iy, 0.0, static_cast<double>(s.ny - 1));
      const auto x0 = static_cast<std::int64_t>(std::floor(ix));
      const auto y0 = static_cast<std::int64_t>(std::floor(iy));
      const std::int64_t x1 = std::min(x0 + 1, s.nx - 1);
      const std::int64_t y1 = std::min(y0 + 1, s.ny - 1);
      const double fx = ix - static_cast<double>(x0);
      const double fy = iy - static_cast<double>(y0);
      for (std::int64_t z = 0; z < s.nz; ++z) {
        const double top = (1.0 - fx) * v(x0, y0, z) + fx * v(x1, y0, z);
        const double bot = (1.0 - fx) * v(x0, y1, z) + fx * v(x1, y1, z);
        out(x, y, z) = static_cast<float>((1.0 - fy) * top + fy * bot);
      }
    }
  return out;
}

Mask apply_transform(const Mask& m, const AugmentTransform& t) {
  const Shape& s = m.shape();
  Mask out(s, m.spacing(), 0);
  const InverseMap inv = make_inverse(s, t);
  for (std::int64_t y = 0; y < s.ny; ++y)
    for (std::int64_t x = 0; x < s.nx; ++x) {
      const auto [ix, iy] = inv(static_cast<double>(x), static_cast<double>(y));
      const auto nx = static_cast<std::int64_t>(std::lround(ix));
      const auto ny = static_cast<std::int64_t>(std::lround(iy));
      if (nx < 0 || ny < 0 || nx >= s.nx || ny >= s.ny) continue;
      for (std::int64_t z = 0; z < s.nz; ++z) out(x, y, z) = m(nx, ny, z);
    }
  return out;
}

Augmented augment(const Volume& v, const std::vector<Mask>& masks, const AugmentParams& params, Rng& rng) {
  for (const auto& m : masks) require_same_grid(v, m, "augment");
  Augmented out;
  out.transform = sample_augment(params, rng);
  out.volume = apply_transform(v, out.transform);
  out.masks.reserve(masks.size());
  for (const auto& m : masks) out.masks.push_back(apply_transform(m, out.transform));
  return out;
}

std::vector<Slice2D> balance_slices(const std::vector<Slice2D>& slices, double keep_prob_unlabeled, Rng& rng) {
  if (!(keep_prob_unlabeled >= 0.0 && keep_prob_unlabeled <= 1.0))
    throw UsageError("balance_slices: keep probability must be in [0, 1]");
  std::vector<Slice2D> out;
  for (const auto& s : slices) {
    // One draw per unlabeled slice regardless of outcome keeps the stream aligned.
    if (s.has_label || rng.uniform() < keep_prob_unlabeled) out.push_back(s);
  }
  return out;
}

Volume downsample_xy(const Volume& v, int factor) {
  if (factor < 1) throw UsageError("downsample factor must be >= 1");
  const Shape& s = v.shape();
  const Shape o{(s.nx + factor - 1) / factor, (s.ny + factor - 1) / factor, s.nz};
  Volume out(o, Spacing{v.spacing().dx * factor, v.spacing().dy * factor, v.spacing().dz});
  for (std::int64_t z = 0; z < o.nz; ++z)
    for (std::int64_t y = 0; y < o.ny; ++y)
      for (std::int64_t x = 0; x < o.nx; ++x) {
        double acc = 0.0;
        int n = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) {
            const std::int64_t fx = x * factor + dx;
            const std::int64_t fy = y * factor + dy;
            if (fx >= s.nx || fy >= s.ny) continue;
            acc += v(fx, fy, z);
            ++n;
          }
        out(x, y, z) = static_cast<float>(acc / n);
      }
  return out;
}

Mask downsample_xy(const Mask& m, int factor) {
  if (factor < 1) throw UsageError("downsample factor must be >= 1");
  const Shape& s = m.shape();
  const Shape o{(s.nx + factor - 1) / factor, (s.ny + factor - 1) / factor, s.nz};
  Mask out(o, Spacing{m.spacing().dx * factor, m.spacing().dy * factor, m.spacing().dz}, 0);
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x)
        if (m(x, y, z)) out(x / factor, y / factor, z) = 1;
  return out;
}

}  // namespace ctvseg
