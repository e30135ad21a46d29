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
#include "ctvseg/inputs.hpp"

#include "ctvseg/tensor_util.hpp"

namespace ctvseg {

int localizer_channel(StructureId s) {
  switch (s) {
    case StructureId::CTV: return 0;
    case StructureId::Bladder: return 1;
    case StructureId::Rectum: return 2;
    case StructureId::FemoralHeadL:
    case StructureId::FemoralHeadR: return 3;
    case StructureId::PenileBulb: return 4;
  }
  throw UsageError("unknown structure");
}

VoiConfig VoiConfig::defaults() {
  VoiConfig c;
  c.sizes = {{StructureId::CTV, {48, 48, 32}},          {StructureId::Bladder, {56, 40, 24}},
             {StructureId::Rectum, {32, 40, 48}},       {StructureId::FemoralHeadL, {32, 32, 16}},
             {StructureId::FemoralHeadR, {32, 32, 16}}, {StructureId::PenileBulb, {32, 32, 16}}};
  return c;
}

const Shape& VoiConfig::size(StructureId s) const {
  auto it = sizes.find(s);
  if (it == sizes.end()) throw UsageError("no VOI size for " + std::string(to_string(s)));
  return it->second;
}

void VoiConfig::validate(int divisor) const {
  for (auto s : kAllStructures) {
    const Shape& v = size(s);
    for (int a = 0; a < 3; ++a)
      if (v[a] <= 0 || v[a] % divisor)
        throw UsageError("VOI for " + std::string(to_string(s)) + " must be positive and divisible by " +
                         std::to_string(divisor));
  }
  if (localizer_factor < 1) throw UsageError("localizer factor must be >= 1");
  ahe.validate();
}

nlohmann::ordered_json VoiConfig::to_json() const {
  nlohmann::ordered_json j;
  for (const auto& [s, v] : sizes) j["voi"][std::string(to_string(s))] = {v.nx, v.ny, v.nz};
  j["localizer_factor"] = localizer_factor;
  j["ahe"] = {{"tiles_x", ahe.tiles_x}, {"tiles_y", ahe.tiles_y}, {"clip_limit", ahe.clip_limit}, {"bins", ahe.bins}};
  return j;
}

VoiConfig VoiConfig::from_json(const nlohmann::json& j) {
  VoiConfig c = defaults();
  try {
    if (j.contains("voi"))
      for (const auto& [name, v] : j.at("voi").items())
        c.sizes[parse_structure(name)] = {v.at(0).get<std::int64_t>(), v.at(1).get<std::int64_t>(),
                                          v.at(2).get<std::int64_t>()};
    c.localizer_factor = j.value("localizer_factor", c.localizer_factor);
    if (j.contains("ahe")) {
      const auto& a = j.at("ahe");
      c.ahe.tiles_x = a.value("tiles_x", c.ahe.tiles_x);
      c.ahe.tiles_y = a.value("tiles_y", c.ahe.tiles_y);
      c.ahe.clip_limit = a.value("clip_limit", c.ahe.clip_limit);
      c.ahe.bins = a.value("bins", c.ahe.bins);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad VOI config: ") + e.what());
  }
  return c;
}

std::string_view to_string(CtvVariant v) {
  switch (v) {
    case CtvVariant::AGMTN: return "AG-MTN";
    case CtvVariant::MTN: return "MTN";
    case CtvVariant::AGUNet: return "AG-UNet";
    case CtvVariant::UNet: return "UNet";
  }
  return "?";
}

CtvVariant parse_ctv_variant(std::string_view name) {
  for (auto v : kCtvVariants)
    if (to_string(v) == name) return v;
  throw UsageError("unknown CTV variant '" + std::string(name) + "' (AG-MTN, MTN, AG-UNet, UNet)");
}

bool anatomy_guided(CtvVariant v) { return v == CtvVariant::AGMTN || v == CtvVariant::AGUNet; }
bool multi_task(CtvVariant v) { return v == CtvVariant::AGMTN || v == CtvVariant::MTN; }

torch::Tensor localizer_input(const Volume& coarse_ct) { return (to_tensor(coarse_ct) * kIntensityScale).unsqueeze(1); }

torch::Tensor localizer_labels(const StructureSet& coarse_truth) {
  const Shape& s = coarse_truth.shape();
  auto out = torch::zeros({kLocalizerChannels, s.nz, s.ny, s.nx});
  for (const auto& [id, m] : coarse_truth.masks()) {
    auto ch = out[localizer_channel(id)];
    ch.copy_(torch::maximum(ch, to_tensor(m)));
  }
  return out;
}

torch::Tensor organ_input(const Volume& ct_crop, const AheParams& ahe_params) {
  return to_tensor(ahe(ct_crop, ahe_params)).unsqueeze(0);
}

torch::Tensor ctv_input(const Volume& ct_crop, const Mask* bladder, const Mask* rectum, bool guided,
                        const AheParams& ahe_params) {
  auto base = organ_input(ct_crop, ahe_params);
  if (!guided) return base;
  if (!bladder || !rectum) throw DataError("anatomy-guided CTV input needs bladder and rectum masks");
  require_same_grid(ct_crop, *bladder, "ctv_input");
  require_same_grid(ct_crop, *rectum, "ctv_input");
  const auto ct = to_tensor(ct_crop) * kIntensityScale;
  return torch::cat({base, (ct * to_tensor(*bladder)).unsqueeze(0), (ct * to_tensor(*rectum)).unsqueeze(0)}, 0);
}

Volume predict_probability(SegNet& net, const torch::Tensor& input, const Spacing& spacing) {
  torch::NoGradGuard guard;
  auto p = net->forward(input.unsqueeze(0)).main;
  return to_volume(p, {input.size(3), input.size(2), input.size(1)}, spacing);
}

}  // namespace ctvseg
