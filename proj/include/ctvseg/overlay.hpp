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

#include "ctvseg/uncertainty.hpp"
#include "ctvseg/volcore.hpp"

namespace ctvseg {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  std::array<std::uint8_t, 3> pixel(int x, int y) const {
    const std::size_t o = 3 * (static_cast<std::size_t>(y) * width + x);
    return {rgb[o], rgb[o + 1], rgb[o + 2]};
  }
};

struct OverlayOptions {
  int scale = 4;
  float window_lo = 0.0f;
  float window_hi = 1000.0f;
  float band_alpha = 0.45f;
};

// Slice contour: foreground pixels with a background 4-neighbor (off-slice
// counts as background).
std::vector<std::uint8_t> slice_contour(const Mask& mask, std::int64_t z);

// Inferior, middle and superior representatives: the center slice of each
// third of the sorted slice indices that hold foreground. Fewer than three
// when the mask spans fewer slices.
std::vector<std::int64_t> representative_slices(const Mask& mask);

/// Grayscale CT slice with the reference contour in red, the mean predicted
/// contour in blue and the confidence band as translucent yellow.
RgbImage render_overlay(const Volume& ct, const UncertaintySummary& summary, const Mask* truth, std::int64_t z,
                        const OverlayOptions& opts = {});

void write_png(const RgbImage& image, const std::filesystem::path& path);
RgbImage read_png(const std::filesystem::path& path);

// Writes <out_dir>/<case_id>_z<NN>.png for each representative slice and
// returns the paths. Slice choice follows truth when given, else the mean contour.
std::vector<std::filesystem::path> emit_overlays(const Volume& ct, const UncertaintySummary& summary,
                                                 const Mask* truth, const std::filesystem::path& out_dir,
                                                 const std::string& case_id, const OverlayOptions& opts = {});

}  // namespace ctvseg
