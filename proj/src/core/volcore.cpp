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
#include "ctvseg/volcore.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace ctvseg {

using ordered_json = nlohmann::ordered_json;

std::string to_string(const Shape& s) {
  return std::to_string(s.nx) + "x" + std::to_string(s.ny) + "x" + std::to_string(s.nz);
}

std::size_t count_foreground(const Mask& m) {
  return static_cast<std::size_t>(std::count_if(m.raw().begin(), m.raw().end(), [](std::uint8_t v) { return v != 0; }));
}

Volume to_volume(const Mask& m) {
  Volume v(m.shape(), m.spacing());
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? 1.0f : 0.0f;
  return v;
}

Mask binarize(const Volume& v, float threshold) {
  Mask m(v.shape(), v.spacing());
  for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] >= threshold ? 1 : 0;
  return m;
}

namespace {
constexpr std::array<std::string_view, 6> kStructureNames = {"CTV",          "Bladder",      "Rectum",
                                                             "FemoralHeadL", "FemoralHeadR", "PenileBulb"};
}

std::string_view to_string(StructureId id) { return kStructureNames.at(static_cast<std::size_t>(id)); }

StructureId parse_structure(std::string_view name) {
  for (std::size_t i = 0; i < kStructureNames.size(); ++i)
    if (kStructureNames[i] == name) return static_cast<StructureId>(i);
  throw UsageError("unknown structure '" + std::string(name) + "'");
}

StructureSet::StructureSet(Shape shape, Spacing spacing) : shape_(shape), spacing_(spacing) {}

void StructureSet::set(StructureId id, Mask mask) {
  if (mask.shape() != shape_ || !(mask.spacing() == spacing_))
    throw DataError("structure " + std::string(to_string(id)) + " is not on the structure-set grid");
  for (auto v : mask.raw())
    if (v > 1) throw DataError("structure " + std::string(to_string(id)) + " mask is not binary");
  masks_.insert_or_assign(id, std::move(mask));
}

const Mask& StructureSet::get(StructureId id) const {
  auto it = masks_.find(id);
  if (it == masks_.end()) throw DataError("structure " + std::string(to_string(id)) + " missing");
  return it->second;
}

Mask& StructureSet::get(StructureId id) {
  auto it = masks_.find(id);
  if (it == masks_.end()) throw DataError("structure " + std::string(to_string(id)) + " missing");
  return it->second;
}

Voi voi_around(const std::array<double, 3>& center, const Shape& size) {
  Voi voi;
  voi.size = size;
  for (int a = 0; a < 3; ++a)
    voi.origin[a] = static_cast<std::int64_t>(std::lround(center[a] - 0.5 * static_cast<double>(size[a] - 1)));
  return voi;
}

CropPlacement place_voi(const Voi& requested, const Shape& grid) {
  if (!requested.size.valid()) throw UsageError("zero-size VOI");
  CropPlacement p;
  for (int a = 0; a < 3; ++a) {
    const std::int64_t s = requested.size[a];
    const std::int64_t n = grid[a];
    if (s <= n) {
      p.src_origin[a] = std::clamp<std::int64_t>(requested.origin[a], 0, n - s);
      p.dst_offset[a] = 0;
      p.extent[a] = s;
    } else {
      p.src_origin[a] = 0;
      p.dst_offset[a] = (s - n) / 2;
      p.extent[a] = n;
    }
  }
  return p;
}

Voi clamp_voi(const Voi& requested, const Shape& grid) {
  const CropPlacement p = place_voi(requested, grid);
  Voi out;
  out.size = requested.size;
  for (int a = 0; a < 3; ++a) out.origin[a] = p.src_origin[a] - p.dst_offset[a];
  return out;
}

Volume crop(const Volume& v, const Voi& voi) {
  const float lo = v.empty() ? 0.0f : *std::min_element(v.raw().begin(), v.raw().end());
  return crop<float>(v, voi, lo);
}

Mask crop(const Mask& m, const Voi& voi) { return crop<std::uint8_t>(m, voi, 0); }

Components label_components(const Mask& mask) {
  Components out{Grid<std::int32_t>(mask.shape(), mask.spacing(), 0), 0};
  const Shape& s = mask.shape();
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < mask.size(); ++seed) {
    if (!mask[seed] || out.labels[seed] != 0) continue;
    const std::int32_t label = ++out.count;
    out.labels[seed] = label;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t cur = stack.back();
      stack.pop_back();
      const Index3 c = mask.index_of(cur);
      const std::array<Index3, 6> nbrs = {Index3{c.x - 1, c.y, c.z}, Index3{c.x + 1, c.y, c.z},
                                          Index3{c.x, c.y - 1, c.z}, Index3{c.x, c.y + 1, c.z},
                                          Index3{c.x, c.y, c.z - 1}, Index3{c.x, c.y, c.z + 1}};
      for (const auto& n : nbrs) {
        if (!s.contains(n)) continue;
        const std::size_t o = mask.offset(n.x, n.y, n.z);
        if (mask[o] && out.labels[o] == 0) {
          out.labels[o] = label;
          stack.push_back(o);
        }
      }
    }
  }
  return out;
}

std::pair<Mask, Mask> split_bilateral(const Mask& mask) {
  Mask left(mask.shape(), mask.spacing(), 0);
  Mask right(mask.shape(), mask.spacing(), 0);
  const Components comps = label_components(mask);
  if (comps.count > 2)
    throw DataError("split_bilateral: expected at most 2 components, found " + std::to_string(comps.count));
  if (comps.count == 0) return {left, right};

  std::array<double, 2> sum_x{0.0, 0.0};
  std::array<double, 2> n{0.0, 0.0};
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const int l = comps.labels[i];
    if (l == 0) continue;
    sum_x[l - 1] += static_cast<double>(mask.index_of(i).x);
    n[l - 1] += 1.0;
  }
  int left_label = 1;
  if (comps.count == 2) {
    left_label = (sum_x[0] / n[0] <= sum_x[1] / n[1]) ? 1 : 2;
  } else {
    const double cx = sum_x[0] / n[0];
    const bool on_left = 2.0 * cx < static_cast<double>(mask.shape().nx - 1);
    left_label = on_left ? 1 : -1;
  }
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const int l = comps.labels[i];
    if (l == 0) continue;
    (l == left_label ? left : right)[i] = 1;
  }
  return {left, right};
}

// ---------------------------------------------------------------------------
// MIVOL1
// ---------------------------------------------------------------------------

std::string encode_mivol(const Volume& v) {
  ordered_json header;
  header["magic"] = "MIVOL1";
  header["shape"] = {v.shape().nx, v.shape().ny, v.shape().nz};
  header["spacing_mm"] = {v.spacing().dx, v.spacing().dy, v.spacing().dz};
  header["dtype"] = "f32le";
  std::string out = header.dump();
  out.push_back('\n');
  const std::size_t start = out.size();
  out.resize(start + v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) out[start + 4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
  return out;
}

Volume decode_mivol(std::string_view bytes) {
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw DataError("MIVOL: missing header line");
  ordered_json header;
  try {
    header = ordered_json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("MIVOL: malformed header: ") + e.what());
  }
  try {
    if (header.at("magic").get<std::string>() != "MIVOL1") throw DataError("MIVOL: bad magic");
    if (header.at("dtype").get<std::string>() != "f32le")
      throw DataError("MIVOL: unsupported dtype '" + header.at("dtype").get<std::string>() + "'");
    const auto& sh = header.at("shape");
    const auto& sp = header.at("spacing_mm");
    if (sh.size() != 3 || sp.size() != 3) throw DataError("MIVOL: shape and spacing_mm need 3 entries");
    const Shape shape{sh[0].get<std::int64_t>(), sh[1].get<std::int64_t>(), sh[2].get<std::int64_t>()};
    const Spacing spacing{sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    if (!shape.valid()) throw DataError("MIVOL: non-positive shape");
    if (!spacing.valid()) throw DataError("MIVOL: non-positive spacing");
    const std::string_view payload = bytes.substr(nl + 1);
    if (payload.size() != shape.count() * 4)
      throw DataError("MIVOL: payload is " + std::to_string(payload.size()) + " bytes, expected " +
                      std::to_string(shape.count() * 4));
    std::vector<float> data(shape.count());
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * i + b])) << (8 * b);
      data[i] = std::bit_cast<float>(bits);
    }
    return Volume(shape, spacing, std::move(data));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("MIVOL: malformed header: ") + e.what());
  }
}

void write_mivol(const Volume& v, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_mivol(v);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed: " + path.string());
}

Volume read_mivol(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return decode_mivol(ss.str());
}

void write_mask(const Mask& m, const std::filesystem::path& path) { write_mivol(to_volume(m), path); }

Mask read_mask(const std::filesystem::path& path) {
  const Volume v = read_mivol(path);
  Mask m(v.shape(), v.spacing());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (v[i] != 0.0f && v[i] != 1.0f) throw DataError(path.string() + ": mask values must be 0 or 1");
    m[i] = v[i] == 1.0f ? 1 : 0;
  }
  return m;
}

namespace {
std::string structure_filename(StructureId id) {
  std::string name(to_string(id));
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  return name + ".mivol";
}
}  // namespace

void write_structure_set(const StructureSet& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ordered_json manifest;
  manifest["shape"] = {s.shape().nx, s.shape().ny, s.shape().nz};
  manifest["spacing_mm"] = {s.spacing().dx, s.spacing().dy, s.spacing().dz};
  manifest["structures"] = ordered_json::object();
  for (const auto& [id, mask] : s.masks()) {
    const std::string file = structure_filename(id);
    write_mask(mask, dir / file);
    manifest["structures"][std::string(to_string(id))] = file;
  }
  std::ofstream f(dir / "structures.json");
  f << manifest.dump(2) << "\n";
}

StructureSet read_structure_set(const std::filesystem::path& dir) {
  std::ifstream f(dir / "structures.json");
  if (!f) throw DataError("missing structure manifest in " + dir.string());
  ordered_json manifest;
  try {
    manifest = ordered_json::parse(f);
    const auto& sh = manifest.at("shape");
    const auto& sp = manifest.at("spacing_mm");
    StructureSet out(Shape{sh[0].get<std::int64_t>(), sh[1].get<std::int64_t>(), sh[2].get<std::int64_t>()},
                     Spacing{sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()});
    for (const auto& [name, file] : manifest.at("structures").items())
      out.set(parse_structure(name), read_mask(dir / file.get<std::string>()));
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad structure manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace ctvseg
