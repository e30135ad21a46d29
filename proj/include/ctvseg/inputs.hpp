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
#include <map>
#include <string_view>

#include <json.hpp>
#include <torch/torch.h>

#include "ctvseg/nets.hpp"
#include "ctvseg/preprocess.hpp"
#include "ctvseg/volcore.hpp"

namespace ctvseg {

// CT numbers on the 0-1000 scale are multiplied by this before entering a net.
inline constexpr float kIntensityScale = 1e-3f;

// Localizer output channels. Both femoral heads share one channel.
inline constexpr int kLocalizerChannels = 5;
enum class LocalizerChannel : int { CTV = 0, Bladder, Rectum, FemoralHeads, PenileBulb };
int localizer_channel(StructureId s);

/// VOI sizes and preprocessing shared by training and inference.
struct VoiConfig {
  std::map<StructureId, Shape> sizes;
  int localizer_factor = 2;
  AheParams ahe{4, 4, 0.01, 256};

  static VoiConfig defaults();
  const Shape& size(StructureId s) const;
  // Throws UsageError unless every size is divisible by `divisor`.
  void validate(int divisor) const;
  nlohmann::ordered_json to_json() const;
  static VoiConfig from_json(const nlohmann::json& j);
};

enum class CtvVariant { AGMTN, MTN, AGUNet, UNet };
inline constexpr std::array<CtvVariant, 4> kCtvVariants = {CtvVariant::AGMTN, CtvVariant::MTN, CtvVariant::AGUNet,
                                                           CtvVariant::UNet};
std::string_view to_string(CtvVariant v);
CtvVariant parse_ctv_variant(std::string_view name);
bool anatomy_guided(CtvVariant v);
bool multi_task(CtvVariant v);

// {nz, 1, ny, nx}: one 2D sample per axial slice.
torch::Tensor localizer_input(const Volume& coarse_ct);
// {kLocalizerChannels, nz, ny, nx} coarse labels.
torch::Tensor localizer_labels(const StructureSet& coarse_truth);
// {1, nz, ny, nx}: AHE of the crop.
torch::Tensor organ_input(const Volume& ct_crop, const AheParams& ahe);
// {1 or 3, nz, ny, nx}. Anatomy-guided inputs append ct*bladder and ct*rectum
// (scaled by kIntensityScale, zero outside the masks).
torch::Tensor ctv_input(const Volume& ct_crop, const Mask* bladder, const Mask* rectum, bool anatomy_guided,
                        const AheParams& ahe);

// Deterministic forward of one {C, nz, ny, nx} input; the main head as a volume.
Volume predict_probability(SegNet& net, const torch::Tensor& input, const Spacing& spacing);

}  // namespace ctvseg
