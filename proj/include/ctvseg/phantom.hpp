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
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctvseg/volcore.hpp"

namespace ctvseg {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Sampling ranges, in millimeters. Positions are offsets from the grid's
/// physical center (x lateral, y anterior→posterior, z inferior→superior).
struct OrganRanges {
  Range midline_x{-3.0, 3.0};
  Range organ_offset_x{-2.0, 2.0};  // per-organ lateral offset from the midline
  Range bladder_semi_x{18.0, 26.0};
  Range bladder_semi_y{12.0, 17.0};
  Range bladder_semi_z{15.0, 22.0};
  Range bladder_offset_y{-24.0, -16.0};
  Range bladder_offset_z{16.0, 28.0};
  Range rectum_radius{8.0, 11.0};
  Range rectum_gap{14.0, 22.0};  // bladder posterior wall to rectum anterior wall
  Range rectum_curvature{0.0, 0.002};  // mm^-1, posterior bow away from the vertex
  Range rectum_top_z{40.0, 55.0};
  Range femoral_radius{12.0, 15.0};
  Range femoral_separation{64.0, 74.0};  // center to center
  Range femoral_offset_y{-4.0, 3.0};
  Range femoral_offset_z{-14.0, -2.0};
  Range penile_semi_x{8.0, 10.0};
  Range penile_semi_y{6.0, 8.0};
  Range penile_semi_z{6.0, 9.0};
  Range penile_offset_y{-14.0, -6.0};
  Range penile_offset_z{-48.0, -38.0};
};

struct PhantomSpec {
  std::uint64_t seed = 0;
  // Selects the CTV extent jitter draw; styles share geometry, CT and OARs.
  std::uint64_t style = 0;
  Shape shape{96, 96, 48};
  Spacing spacing{1.17, 1.17, 3.0};
  OrganRanges ranges{};
  double noise_sigma = 20.0;
  // Half-width (mm) of the uniform jitter on the CTV inferior/superior planes.
  double style_jitter = 3.0;
  // Lateral CTV half-width as a fraction of half the femoral-head separation.
  double ctv_lateral_fraction = 0.55;
};

// Intensity levels on the 0-1000 synthetic scale.
struct PhantomIntensities {
  static constexpr float kAir = 0.0f;
  static constexpr float kTissue = 500.0f;
  static constexpr float kBladder = 430.0f;
  static constexpr float kRectumWall = 560.0f;
  static constexpr float kRectumLumen = 150.0f;
  static constexpr float kBone = 880.0f;
  static constexpr float kPenileBulb = 580.0f;
};

/// Realized organ geometry (mm, absolute physical coordinates of voxel
/// centers, i.e. index * spacing).
struct PhantomGeometry {
  double body_cx, body_cy, body_ax, body_ay;
  double bladder_cx, bladder_cy, bladder_cz, bladder_ax, bladder_ay, bladder_az;
  double rectum_cx, rectum_y0, rectum_z0, rectum_curvature, rectum_radius, rectum_wall, rectum_top;
  double femoral_l_cx, femoral_r_cx, femoral_cy, femoral_cz, femoral_radius;
  double penile_cx, penile_cy, penile_cz, penile_ax, penile_ay, penile_az;
  // CTV construction
  double ctv_z_lo, ctv_z_hi, ctv_x_center, ctv_half_width;
  double jitter_lo, jitter_hi;
  int attempts;
};

nlohmann::json to_json(const PhantomGeometry& g);
PhantomGeometry geometry_from_json(const nlohmann::json& j);

struct PhantomCase {
  std::string id;
  Volume ct;
  StructureSet truth;
  PhantomGeometry geometry;
  nlohmann::json meta;
};

/// Pure function of `spec`. Throws DataError when no feasible geometry is
/// found on the grid.
PhantomCase generate(const PhantomSpec& spec);

// Organ-only rendering (no CTV, no noise) from a realized geometry.
StructureSet render_organs(const PhantomGeometry& g, const Shape& shape, const Spacing& spacing);
// The CTV rule from geometry alone (before removing organ voxels).
Mask render_ctv_rule(const PhantomGeometry& g, const Shape& shape, const Spacing& spacing);

struct DatasetSplit {
  std::vector<PhantomSpec> train, val, test;
};

// Per-case seed: derived from base seed, split index and position.
std::uint64_t case_seed(std::uint64_t base_seed, int split, std::uint64_t index);
DatasetSplit dataset_specs(std::uint64_t base_seed, int n_train, int n_val, int n_test, const PhantomSpec& base = {});

struct Dataset {
  std::vector<PhantomCase> train, val, test;
};
Dataset generate_dataset(std::uint64_t base_seed, int n_train, int n_val, int n_test, const PhantomSpec& base = {});

// On-disk layout: <dir>/index.json, <dir>/<split>/<case-id>/{ct.mivol, case.json, truth/}.
void write_case(const PhantomCase& c, const std::filesystem::path& case_dir);
PhantomCase read_case(const std::filesystem::path& case_dir);
void write_dataset(const Dataset& d, std::uint64_t base_seed, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace ctvseg
