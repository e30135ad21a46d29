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

#include <vector>

#include "ctvseg/volcore.hpp"

namespace ctvseg {

/// Exact squared Euclidean distance (mm^2) from every voxel center to the
/// nearest foreground voxel center, honoring anisotropic spacing. Separable
/// lower-envelope-of-parabolas transform, one pass per axis. Voxels are
/// +infinity when the mask is empty.
std::vector<double> squared_distance_to_foreground(const Mask& mask);

/// Distance-map regression target: 0 on foreground, millimeters to the
/// nearest foreground voxel center elsewhere. Throws DataError on an empty mask.
Volume distance_target(const Mask& mask);

/// d / crop_diag_mm clamped to [0, 1].
Volume normalize_distance(const Volume& d, double crop_diag_mm);

// Physical diagonal of a grid, in millimeters.
double physical_diagonal(const Shape& shape, const Spacing& spacing);

}  // namespace ctvseg
