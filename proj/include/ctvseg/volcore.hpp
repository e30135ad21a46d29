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

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctvseg/error.hpp"

namespace ctvseg {

/// Physical voxel size in millimeters.
struct Spacing {
  double dx = 1.17;
  double dy = 1.17;
  double dz = 3.0;

  bool valid() const { return dx > 0.0 && dy > 0.0 && dz > 0.0; }
  std::array<double, 3> as_array() const { return {dx, dy, dz}; }
  bool operator==(const Spacing&) const = default;
};

struct Index3 {
  std::int64_t x = 0;
  std::int64_t y = 0;
  std::int64_t z = 0;

  std::int64_t operator[](int axis) const { return axis == 0 ? x : (axis == 1 ? y : z); }
  std::int64_t& operator[](int axis) { return axis == 0 ? x : (axis == 1 ? y : z); }
  bool operator==(const Index3&) const = default;
};

struct Shape {
  std::int64_t nx = 0;
  std::int64_t ny = 0;
  std::int64_t nz = 0;

  std::size_t count() const { return static_cast<std::size_t>(nx * ny * nz); }
  bool valid() const { return nx > 0 && ny > 0 && nz > 0; }
  bool contains(const Index3& i) const {
    return i.x >= 0 && i.y >= 0 && i.z >= 0 && i.x < nx && i.y < ny && i.z < nz;
  }
  std::int64_t operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  std::int64_t& operator[](int axis) { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense 3D grid in x-fastest order with physical spacing.
template <typename T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(Shape shape, Spacing spacing, T fill = T{}) : shape_(shape), spacing_(spacing) {
    check_meta();
    data_.assign(shape_.count(), fill);
  }
  Grid(Shape shape, Spacing spacing, std::vector<T> data)
      : shape_(shape), spacing_(spacing), data_(std::move(data)) {
    check_meta();
    if (data_.size() != shape_.count()) throw DataError("grid data length does not match shape " + to_string(shape_));
  }

  const Shape& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& raw() { return data_; }
  const std::vector<T>& raw() const { return data_; }

  std::size_t offset(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return static_cast<std::size_t>(x + shape_.nx * (y + shape_.ny * z));
  }
  Index3 index_of(std::size_t offset) const {
    const auto o = static_cast<std::int64_t>(offset);
    return {o % shape_.nx, (o / shape_.nx) % shape_.ny, o / (shape_.nx * shape_.ny)};
  }
  T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) { return data_[offset(x, y, z)]; }
  const T& operator()(std::int64_t x, std::int64_t y, std::int64_t z) const { return data_[offset(x, y, z)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <typename U>
  bool same_grid(const Grid<U>& other) const {
    return shape_ == other.shape() && spacing_ == other.spacing();
  }

  bool operator==(const Grid&) const = default;

 private:
  void check_meta() const {
    if (!shape_.valid()) throw DataError("grid shape must be positive, got " + to_string(shape_));
    if (!spacing_.valid()) throw DataError("grid spacing must be positive");
  }

  Shape shape_{};
  Spacing spacing_{};
  std::vector<T> data_;
};

using Volume = Grid<float>;
using Mask = Grid<std::uint8_t>;

template <typename T, typename U>
void require_same_grid(const Grid<T>& a, const Grid<U>& b, std::string_view what) {
  if (!a.same_grid(b)) throw DataError(std::string(what) + ": grid mismatch (" + to_string(a.shape()) + " vs " + to_string(b.shape()) + ")");
}

std::size_t count_foreground(const Mask& m);
Volume to_volume(const Mask& m);
// Voxels >= threshold become foreground.
Mask binarize(const Volume& v, float threshold = 0.5f);

enum class StructureId : int { CTV = 0, Bladder, Rectum, FemoralHeadL, FemoralHeadR, PenileBulb };

inline constexpr std::array<StructureId, 6> kAllStructures = {
    StructureId::CTV,          StructureId::Bladder,      StructureId::Rectum,
    StructureId::FemoralHeadL, StructureId::FemoralHeadR, StructureId::PenileBulb};
inline constexpr std::array<StructureId, 5> kOrgans = {StructureId::Bladder, StructureId::Rectum,
                                                       StructureId::FemoralHeadL, StructureId::FemoralHeadR,
                                                       StructureId::PenileBulb};

std::string_view to_string(StructureId id);
StructureId parse_structure(std::string_view name);

/// Per-structure binary masks over one shared grid.
class StructureSet {
 public:
  StructureSet() = default;
  StructureSet(Shape shape, Spacing spacing);

  const Shape& shape() const { return shape_; }
  const Spacing& spacing() const { return spacing_; }

  // Throws DataError when the mask is off-grid or not binary.
  void set(StructureId id, Mask mask);
  bool has(StructureId id) const { return masks_.contains(id); }
  const Mask& get(StructureId id) const;
  Mask& get(StructureId id);
  const std::map<StructureId, Mask>& masks() const { return masks_; }

 private:
  Shape shape_{};
  Spacing spacing_{};
  std::map<StructureId, Mask> masks_;
};

/// Requested crop window. The origin may be negative or run past the grid
/// before clamping; size is always positive.
struct Voi {
  Index3 origin;
  Shape size;
  bool operator==(const Voi&) const = default;
};

// Window of `size` centered on a real-valued voxel position.
Voi voi_around(const std::array<double, 3>& center, const Shape& size);

// Per-axis placement of a VOI inside a grid: src_origin is where the copied
// region starts in the grid, dst_offset where it lands in the crop, extent how
// many voxels are copied.
struct CropPlacement {
  Index3 src_origin;
  Index3 dst_offset;
  Shape extent;
};

// VOIs that touch the border are shifted inward so the full size fits; on an
// axis where the grid is smaller than the VOI the grid is centered in the crop.
CropPlacement place_voi(const Voi& requested, const Shape& grid);
// The effective (clamped) VOI; equal to the request when it already fits.
Voi clamp_voi(const Voi& requested, const Shape& grid);

template <typename T>
Grid<T> crop(const Grid<T>& v, const Voi& voi, T pad) {
  if (!voi.size.valid()) throw UsageError("crop: zero-size VOI");
  const CropPlacement p = place_voi(voi, v.shape());
  Grid<T> out(voi.size, v.spacing(), pad);
  for (std::int64_t z = 0; z < p.extent.nz; ++z)
    for (std::int64_t y = 0; y < p.extent.ny; ++y)
      for (std::int64_t x = 0; x < p.extent.nx; ++x)
        out(p.dst_offset.x + x, p.dst_offset.y + y, p.dst_offset.z + z) =
            v(p.src_origin.x + x, p.src_origin.y + y, p.src_origin.z + z);
  return out;
}

// Volume crop; padding (only when the grid is smaller than the VOI) uses the
// volume minimum.
Volume crop(const Volume& v, const Voi& voi);
Mask crop(const Mask& m, const Voi& voi);

/// Writes src into dst at origin. Throws DataError if src does not fit.
template <typename T>
Grid<T> paste(Grid<T> dst, const Grid<T>& src, const Index3& origin) {
  const Shape& d = dst.shape();
  const Shape& s = src.shape();
  if (origin.x < 0 || origin.y < 0 || origin.z < 0 || origin.x + s.nx > d.nx || origin.y + s.ny > d.ny ||
      origin.z + s.nz > d.nz)
    throw DataError("paste: source " + to_string(s) + " overflows destination " + to_string(d));
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) dst(origin.x + x, origin.y + y, origin.z + z) = src(x, y, z);
  return dst;
}

// Inverse of crop: writes the in-grid part of a VOI-shaped grid back into dst.
template <typename T>
Grid<T> uncrop(Grid<T> dst, const Grid<T>& src, const Voi& voi) {
  if (src.shape() != voi.size) throw DataError("uncrop: source shape does not match VOI size");
  const CropPlacement p = place_voi(voi, dst.shape());
  for (std::int64_t z = 0; z < p.extent.nz; ++z)
    for (std::int64_t y = 0; y < p.extent.ny; ++y)
      for (std::int64_t x = 0; x < p.extent.nx; ++x)
        dst(p.src_origin.x + x, p.src_origin.y + y, p.src_origin.z + z) =
            src(p.dst_offset.x + x, p.dst_offset.y + y, p.dst_offset.z + z);
  return dst;
}

/// 6-connected component labels (0 = background, 1..count).
struct Components {
  Grid<std::int32_t> labels;
  int count = 0;
};
Components label_components(const Mask& mask);

// Splits a mask of at most two 6-connected components into (left, right) by
// centroid x. Lower x is "left". A single component goes to the side of the
// grid midline holding its centroid.
std::pair<Mask, Mask> split_bilateral(const Mask& mask);

// MIVOL1: one JSON header line {magic, shape, spacing_mm, dtype}, newline,
// then nx*ny*nz little-endian float32 values in x-fastest order.
void write_mivol(const Volume& v, const std::filesystem::path& path);
Volume read_mivol(const std::filesystem::path& path);
std::string encode_mivol(const Volume& v);
Volume decode_mivol(std::string_view bytes);

// Masks are stored as 0/1 float volumes.
void write_mask(const Mask& m, const std::filesystem::path& path);
Mask read_mask(const std::filesystem::path& path);

// Structure set directory: one MIVOL per structure plus structures.json
// mapping structure name to file name.
void write_structure_set(const StructureSet& s, const std::filesystem::path& dir);
StructureSet read_structure_set(const std::filesystem::path& dir);

}  // namespace ctvseg
