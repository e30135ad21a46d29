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
#include <optional>
#include <string>
#include <vector>

#include "ctvseg/volcore.hpp"

namespace ctvseg {

inline constexpr int kDefaultMcdoSamples = 50;
inline constexpr double kBoundZ = 1.96;
inline constexpr float kContourThreshold = 0.5f;

/// T probability volumes from repeated stochastic inference.
struct McdoStack {
  std::vector<Volume> samples;
  std::string config_hash;
  std::vector<std::uint64_t> seeds;

  void validate() const;
};

struct UncertaintySummary {
  Volume mean;
  Volume variance;  // population variance
  Volume lower;     // clamp(mean - 1.96 sd, 0, 1)
  Volume upper;     // clamp(mean + 1.96 sd, 0, 1)
  Mask mean_contour;
  Mask lower_contour;
  Mask upper_contour;
  Mask band;  // upper_contour minus lower_contour
};

/// Voxelwise moments and 95% bounds. Requires T >= 2.
UncertaintySummary summarize(const McdoStack& stack);

/// Mean DSC between each binarized sample and the binarized mean; nullopt
/// when the mean contour is empty.
std::optional<double> contour_quality(const McdoStack& stack);
std::optional<double> contour_quality(const McdoStack& stack, const UncertaintySummary& summary);

// mean.mivol, variance.mivol, lower.mivol, upper.mivol, mean_contour.mivol, band.mivol
void write_summary(const UncertaintySummary& s, const std::filesystem::path& dir);
UncertaintySummary read_summary(const std::filesystem::path& dir);

}  // namespace ctvseg
