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

#include <array>
#include <vector>

#include "ctvseg/rng.hpp"
#include "ctvseg/volcore.hpp"

namespace ctvseg {

struct AheParams {
  int tiles_x = 8;
  int tiles_y = 8;
  // Per-bin cap as a fraction of the tile pixel count; 1.0 disables clipping.
  double clip_limit = 0.01;
  int bins = 256;

  void validate() const;
};

/// Contrast-limited adaptive histogram equalization, slice by slice. Each tile
/// gets a clipped-histogram CDF mapping; voxels blend the four nearest tile
/// mappings bilinearly. The histogram range is the volume min..max. Output is
/// in [0, 1]. A constant tile maps linearly over that range.
Volume ahe(const Volume& v, const AheParams& p = {});

// The CDF lookup a single tile would use; exposed for testing.
std::vector<double> ahe_tile_mapping(std::span<const float> tile_values, float lo, float hi, const AheParams& p);

/// Mean foreground voxel index. Throws DataError on an empty mask.
std::array<double, 3> centroid(const Mask& mask);

struct AugmentParams {
  double max_rotation_deg = 10.0;
  double scale_min = 0.97;
  double scale_max = 1.03;
  bool flip_x = true;

  void validate() const;
};

struct AugmentTransform {
  double angle_deg = 0.0;
  double scale = 1.0;
  bool flip = false;
};

AugmentTransform sample_augment(const AugmentParams& params, Rng& rng);

/// Applies one in-plane similarity transform (rotation about z, isotropic
/// in-plane scale, optional x flip) about the grid center: linear
/// interpolation for the volume, nearest neighbor for masks. Samples outside
/// the grid take the volume minimum / background.
Volume apply_transform(const Volume& v, const AugmentTransform& t);
Mask apply_transform(const Mask& m, const AugmentTransform& t);

struct Augmented {
  Volume volume;
  std::vector<Mask> masks;
  AugmentTransform transform;
};
Augmented augment(const Volume& v, const std::vector<Mask>& masks, const AugmentParams& params, Rng& rng);

/// One training slice for the 2D localizer.
struct Slice2D {
  std::vector<float> image;   // nx*ny
  std::vector<float> labels;  // channels*nx*ny
  bool has_label = false;
  int case_index = 0;
  int z = 0;
};

/// Keeps every labeled slice and each unlabeled slice independently with
/// probability keep_prob_unlabeled.
std::vector<Slice2D> balance_slices(const std::vector<Slice2D>& slices, double keep_prob_unlabeled, Rng& rng);

// In-plane block-average downsampling by an integer factor (z unchanged).
Volume downsample_xy(const Volume& v, int factor);
// Max-pooled mask downsampling in-plane: a coarse voxel is foreground if any
// covered fine voxel is.
Mask downsample_xy(const Mask& m, int factor);

}  // namespace ctvseg
