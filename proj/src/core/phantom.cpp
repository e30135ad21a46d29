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
#include "ctvseg/phantom.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "ctvseg/rng.hpp"

namespace ctvseg {
namespace {

using json = nlohmann::json;

constexpr int kMaxAttempts = 64;
constexpr std::size_t kMinCtvVoxels = 200;

// Rng stream ids within one case seed.
constexpr std::uint64_t kGeometryStream = 0;
constexpr std::uint64_t kStyleStream = 1;
constexpr std::uint64_t kNoiseStream = 2;

double draw(Rng& rng, const Range& r) { return rng.uniform(r.lo, r.hi); }

double sq(double v) { return v * v; }

struct Point {
  double x, y, z;
};

Point position(const Spacing& sp, std::int64_t i, std::int64_t j, std::int64_t k) {
  return {static_cast<double>(i) * sp.dx, static_cast<double>(j) * sp.dy, static_cast<double>(k) * sp.dz};
}

bool in_bladder(const PhantomGeometry& g, const Point& p) {
  return sq((p.x - g.bladder_cx) / g.bladder_ax) + sq((p.y - g.bladder_cy) / g.bladder_ay) +
             sq((p.z - g.bladder_cz) / g.bladder_az) <=
         1.0;
}

double rectum_center_y(const PhantomGeometry& g, double z) {
  const double zc = std::min(z, g.rectum_top);
  return g.rectum_y0 + g.rectum_curvature * sq(zc - g.rectum_z0);
}

// Squared in-plane distance to the rectum centerline; infinite above its top.
double rectum_dist2(const PhantomGeometry& g, const Point& p) {
  if (p.z > g.rectum_top) return std::numeric_limits<double>::infinity();
  return sq(p.x - g.rectum_cx) + sq(p.y - rectum_center_y(g, p.z));
}

bool in_sphere(double cx, double cy, double cz, double r, const Point& p) {
  return sq(p.x - cx) + sq(p.y - cy) + sq(p.z - cz) <= r * r;
}

bool in_penile(const PhantomGeometry& g, const Point& p) {
  return sq((p.x - g.penile_cx) / g.penile_ax) + sq((p.y - g.penile_cy) / g.penile_ay) +
             sq((p.z - g.penile_cz) / g.penile_az) <=
         1.0;
}

bool in_body(const PhantomGeometry& g, const Point& p) {
  return sq((p.x - g.body_cx) / g.body_ax) + sq((p.y - g.body_cy) / g.body_ay) <= 1.0;
}

bool in_ctv_rule(const PhantomGeometry& g, const Point& p) {
  if (p.z < g.ctv_z_lo || p.z > g.ctv_z_hi) return false;
  if (std::abs(p.x - g.ctv_x_center) > g.ctv_half_width) return false;
  const double u = 1.0 - sq((p.x - g.bladder_cx) / g.bladder_ax) - sq((p.z - g.bladder_cz) / g.bladder_az);
  const double y_front = g.bladder_cy + g.bladder_ay * std::sqrt(std::max(0.0, u));
  const double y_back = rectum_center_y(g, p.z) - g.rectum_radius;
  return p.y > y_front && p.y < y_back;
}

PhantomGeometry sample_geometry(const PhantomSpec& spec, Rng& rng) {
  const OrganRanges& r = spec.ranges;
  const double ex = static_cast<double>(spec.shape.nx - 1) * spec.spacing.dx;
  const double ey = static_cast<double>(spec.shape.ny - 1) * spec.spacing.dy;
  const double ez = static_cast<double>(spec.shape.nz - 1) * spec.spacing.dz;
  const double cx = 0.5 * ex, cy = 0.5 * ey, cz = 0.5 * ez;

  PhantomGeometry g{};
  g.body_cx = cx;
  g.body_cy = cy;
  g.body_ax = 0.49 * ex;
  g.body_ay = 0.49 * ey;

  const double mid = cx + draw(rng, r.midline_x);
  g.bladder_cx = mid + draw(rng, r.organ_offset_x);
  g.bladder_ax = draw(rng, r.bladder_semi_x);
  g.bladder_ay = draw(rng, r.bladder_semi_y);
  g.bladder_az = draw(rng, r.bladder_semi_z);
  g.bladder_cy = cy + draw(rng, r.bladder_offset_y);
  g.bladder_cz = cz + draw(rng, r.bladder_offset_z);

  g.rectum_cx = mid + draw(rng, r.organ_offset_x);
  g.rectum_radius = draw(rng, r.rectum_radius);
  g.rectum_wall = 3.0;
  const double gap = draw(rng, r.rectum_gap);
  g.rectum_y0 = g.bladder_cy + g.bladder_ay + gap + g.rectum_radius;
  g.rectum_z0 = cz;
  g.rectum_curvature = draw(rng, r.rectum_curvature);
  g.rectum_top = cz + draw(rng, r.rectum_top_z);

  g.femoral_radius = draw(rng, r.femoral_radius);
  const double sep = draw(rng, r.femoral_separation);
  g.femoral_l_cx = mid - 0.5 * sep;
  g.femoral_r_cx = mid + 0.5 * sep;
  g.femoral_cy = cy + draw(rng, r.femoral_offset_y);
  g.femoral_cz = cz + draw(rng, r.femoral_offset_z);

  g.penile_cx = mid + draw(rng, r.organ_offset_x);
  g.penile_ax = draw(rng, r.penile_semi_x);
  g.penile_ay = draw(rng, r.penile_semi_y);
  g.penile_az = draw(rng, r.penile_semi_z);
  g.penile_cy = cy + draw(rng, r.penile_offset_y);
  g.penile_cz = cz + draw(rng, r.penile_offset_z);
  return g;
}

void apply_ctv_construction(PhantomGeometry& g, const PhantomSpec& spec) {
  Rng style(derive_seed(spec.seed, spec.style), kStyleStream);
  g.jitter_lo = spec.style_jitter > 0.0 ? style.uniform(-spec.style_jitter, spec.style_jitter) : 0.0;
  g.jitter_hi = spec.style_jitter > 0.0 ? style.uniform(-spec.style_jitter, spec.style_jitter) : 0.0;
  g.ctv_z_lo = g.penile_cz + g.penile_az + g.jitter_lo;
  g.ctv_z_hi = g.bladder_cz + g.jitter_hi;
  g.ctv_x_center = 0.5 * (g.femoral_l_cx + g.femoral_r_cx);
  g.ctv_half_width = spec.ctv_lateral_fraction * 0.5 * (g.femoral_r_cx - g.femoral_l_cx);
}

// Organs must sit inside the physical grid extent.
bool organs_inside(const PhantomGeometry& g, const PhantomSpec& spec) {
  const double ex = static_cast<double>(spec.shape.nx - 1) * spec.spacing.dx;
  const double ey = static_cast<double>(spec.shape.ny - 1) * spec.spacing.dy;
  const double ez = static_cast<double>(spec.shape.nz - 1) * spec.spacing.dz;
  auto inside = [&](double lo_x, double hi_x, double lo_y, double hi_y, double lo_z, double hi_z) {
    return lo_x >= 0.0 && hi_x <= ex && lo_y >= 0.0 && hi_y <= ey && lo_z >= 0.0 && hi_z <= ez;
  };
  if (!inside(g.bladder_cx - g.bladder_ax, g.bladder_cx + g.bladder_ax, g.bladder_cy - g.bladder_ay,
              g.bladder_cy + g.bladder_ay, g.bladder_cz - g.bladder_az, g.bladder_cz + g.bladder_az))
    return false;
  const double bow = g.rectum_curvature * std::max(sq(g.rectum_z0), sq(g.rectum_top - g.rectum_z0));
  if (!inside(g.rectum_cx - g.rectum_radius, g.rectum_cx + g.rectum_radius, g.rectum_y0 - g.rectum_radius,
              g.rectum_y0 + bow + g.rectum_radius, 0.0, g.rectum_top))
    return false;
  const double fr = g.femoral_radius;
  if (!inside(g.femoral_l_cx - fr, g.femoral_r_cx + fr, g.femoral_cy - fr, g.femoral_cy + fr, g.femoral_cz - fr,
              g.femoral_cz + fr))
    return false;
  return inside(g.penile_cx - g.penile_ax, g.penile_cx + g.penile_ax, g.penile_cy - g.penile_ay,
                g.penile_cy + g.penile_ay, g.penile_cz - g.penile_az, g.penile_cz + g.penile_az);
}

std::string case_id_for(std::uint64_t seed) {
  std::ostringstream ss;
  ss << "case-" << std::hex << std::setw(16) << std::setfill('0') << seed;
  return ss.str();
}

}  // namespace

json to_json(const PhantomGeometry& g) {
  return json{{"body", {g.body_cx, g.body_cy, g.body_ax, g.body_ay}},
              {"bladder", {g.bladder_cx, g.bladder_cy, g.bladder_cz, g.bladder_ax, g.bladder_ay, g.bladder_az}},
              {"rectum",
               {g.rectum_cx, g.rectum_y0, g.rectum_z0, g.rectum_curvature, g.rectum_radius, g.rectum_wall,
                g.rectum_top}},
              {"femoral_heads", {g.femoral_l_cx, g.femoral_r_cx, g.femoral_cy, g.femoral_cz, g.femoral_radius}},
              {"penile_bulb", {g.penile_cx, g.penile_cy, g.penile_cz, g.penile_ax, g.penile_ay, g.penile_az}},
              {"ctv", {g.ctv_z_lo, g.ctv_z_hi, g.ctv_x_center, g.ctv_half_width}},
              {"jitter", {g.jitter_lo, g.jitter_hi}},
              {"attempts", g.attempts}};
}

PhantomGeometry geometry_from_json(const json& j) {
  PhantomGeometry g{};
  try {
    auto v = [&](const char* key, std::size_t i) { return j.at(key).at(i).get<double>(); };
    g.body_cx = v("body", 0), g.body_cy = v("body", 1), g.body_ax = v("body", 2), g.body_ay = v("body", 3);
    g.bladder_cx = v("bladder", 0), g.bladder_cy = v("bladder", 1), g.bladder_cz = v("bladder", 2);
    g.bladder_ax = v("bladder", 3), g.bladder_ay = v("bladder", 4), g.bladder_az = v("bladder", 5);
    g.rectum_cx = v("rectum", 0), g.rectum_y0 = v("rectum", 1), g.rectum_z0 = v("rectum", 2);
    g.rectum_curvature = v("rectum", 3), g.rectum_radius = v("rectum", 4), g.rectum_wall = v("rectum", 5);
    g.rectum_top = v("rectum", 6);
    g.femoral_l_cx = v("femoral_heads", 0), g.femoral_r_cx = v("femoral_heads", 1);
    g.femoral_cy = v("femoral_heads", 2), g.femoral_cz = v("femoral_heads", 3);
    g.femoral_radius = v("femoral_heads", 4);
    g.penile_cx = v("penile_bulb", 0), g.penile_cy = v("penile_bulb", 1), g.penile_cz = v("penile_bulb", 2);
    g.penile_ax = v("penile_bulb", 3), g.penile_ay = v("penile_bulb", 4), g.penile_az = v("penile_bulb", 5);
    g.ctv_z_lo = v("ctv", 0), g.ctv_z_hi = v("ctv", 1), g.ctv_x_center = v("ctv", 2), g.ctv_half_width = v("ctv", 3);
    g.jitter_lo = v("jitter", 0), g.jitter_hi = v("jitter", 1);
    g.attempts = j.at("attempts").get<int>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad phantom geometry record: ") + e.what());
  }
  return g;
}

StructureSet render_organs(const PhantomGeometry& g, const Shape& shape, const Spacing& sp) {
  StructureSet out(shape, sp);
  Mask bladder(shape, sp, 0), rectum(shape, sp, 0), fl(shape, sp, 0), fr(shape, sp, 0), pb(shape, sp, 0);
  for (std::int64_t k = 0; k < shape.nz; ++k)
    for (std::int64_t j = 0; j < shape.ny; ++j)
      for (std::int64_t i = 0; i < shape.nx; ++i) {
        const Point p = position(sp, i, j, k);
        const std::size_t o = bladder.offset(i, j, k);
        bladder[o] = in_bladder(g, p);
        rectum[o] = rectum_dist2(g, p) <= sq(g.rectum_radius);
        fl[o] = in_sphere(g.femoral_l_cx, g.femoral_cy, g.femoral_cz, g.femoral_radius, p);
        fr[o] = in_sphere(g.femoral_r_cx, g.femoral_cy, g.femoral_cz, g.femoral_radius, p);
        pb[o] = in_penile(g, p);
      }
  out.set(StructureId::Bladder, std::move(bladder));
  out.set(StructureId::Rectum, std::move(rectum));
  out.set(StructureId::FemoralHeadL, std::move(fl));
  out.set(StructureId::FemoralHeadR, std::move(fr));
  out.set(StructureId::PenileBulb, std::move(pb));
  return out;
}

Mask render_ctv_rule(const PhantomGeometry& g, const Shape& shape, const Spacing& sp) {
  Mask m(shape, sp, 0);
  for (std::int64_t k = 0; k < shape.nz; ++k)
    for (std::int64_t j = 0; j < shape.ny; ++j)
      for (std::int64_t i = 0; i < shape.nx; ++i) m(i, j, k) = in_ctv_rule(g, position(sp, i, j, k));
  return m;
}

PhantomCase generate(const PhantomSpec& spec) {
  if (!spec.shape.valid() || !spec.spacing.valid()) throw UsageError("phantom: invalid grid");
  if (spec.noise_sigma < 0.0 || spec.style_jitter < 0.0) throw UsageError("phantom: negative noise or jitter");

  Rng geo_rng(spec.seed, kGeometryStream);
  for (int attempt = 1; attempt <= kMaxAttempts; ++attempt) {
    PhantomGeometry g = sample_geometry(spec, geo_rng);
    g.attempts = attempt;
    apply_ctv_construction(g, spec);
    if (!organs_inside(g, spec)) continue;

    StructureSet truth = render_organs(g, spec.shape, spec.spacing);
    // Organs must be pairwise disjoint.
    Mask occupied(spec.shape, spec.spacing, 0);
    bool overlap = false;
    for (const auto& [id, m] : truth.masks()) {
      for (std::size_t i = 0; i < m.size() && !overlap; ++i) {
        if (!m[i]) continue;
        if (occupied[i]) overlap = true;
        occupied[i] = 1;
      }
      if (count_foreground(m) == 0) overlap = true;
    }
    if (overlap) continue;

    Mask ctv = render_ctv_rule(g, spec.shape, spec.spacing);
    for (std::size_t i = 0; i < ctv.size(); ++i)
      if (occupied[i]) ctv[i] = 0;
    if (count_foreground(ctv) < kMinCtvVoxels) continue;

    // CT: body tissue, organs with their own intensity, CTV left as tissue.
    Volume ct(spec.shape, spec.spacing, PhantomIntensities::kAir);
    const Mask& bladder = truth.get(StructureId::Bladder);
    const Mask& rectum = truth.get(StructureId::Rectum);
    const Mask& fl = truth.get(StructureId::FemoralHeadL);
    const Mask& fr = truth.get(StructureId::FemoralHeadR);
    const Mask& pb = truth.get(StructureId::PenileBulb);
    const double lumen2 = sq(g.rectum_radius - g.rectum_wall);
    Rng noise(spec.seed, kNoiseStream);
    for (std::int64_t k = 0; k < spec.shape.nz; ++k)
      for (std::int64_t j = 0; j < spec.shape.ny; ++j)
        for (std::int64_t i = 0; i < spec.shape.nx; ++i) {
          const std::size_t o = ct.offset(i, j, k);
          const Point p = position(spec.spacing, i, j, k);
          float value = in_body(g, p) ? PhantomIntensities::kTissue : PhantomIntensities::kAir;
          if (bladder[o]) value = PhantomIntensities::kBladder;
          if (rectum[o])
            value = rectum_dist2(g, p) <= lumen2 ? PhantomIntensities::kRectumLumen : PhantomIntensities::kRectumWall;
          if (fl[o] || fr[o]) value = PhantomIntensities::kBone;
          if (pb[o]) value = PhantomIntensities::kPenileBulb;
          ct[o] = value + static_cast<float>(spec.noise_sigma * noise.normal());
        }
    truth.set(StructureId::CTV, std::move(ctv));

    PhantomCase out;
    out.id = case_id_for(spec.seed);
    out.ct = std::move(ct);
    out.truth = std::move(truth);
    out.geometry = g;
    out.meta = json{{"id", out.id},
                    {"seed", spec.seed},
                    {"style", spec.style},
                    {"shape", {spec.shape.nx, spec.shape.ny, spec.shape.nz}},
                    {"spacing_mm", {spec.spacing.dx, spec.spacing.dy, spec.spacing.dz}},
                    {"noise_sigma", spec.noise_sigma},
                    {"style_jitter", spec.style_jitter},
                    {"ctv_lateral_fraction", spec.ctv_lateral_fraction},
                    {"geometry", to_json(g)}};
    return out;
  }
  throw DataError("phantom: no feasible geometry on a " + to_string(spec.shape) + " grid after " +
                  std::to_string(kMaxAttempts) + " attempts");
}

std::uint64_t case_seed(std::uint64_t base_seed, int split, std::uint64_t index) {
  return derive_seed(derive_seed(base_seed, static_cast<std::uint64_t>(split) + 1), index);
}

DatasetSplit dataset_specs(std::uint64_t base_seed, int n_train, int n_val, int n_test, const PhantomSpec& base) {
  if (n_train < 1 || n_val < 1 || n_test < 1) throw UsageError("dataset: every split needs at least one case");
  DatasetSplit out;
  auto fill = [&](std::vector<PhantomSpec>& dst, int split, int n) {
    for (int i = 0; i < n; ++i) {
      PhantomSpec s = base;
      s.seed = case_seed(base_seed, split, static_cast<std::uint64_t>(i));
      dst.push_back(s);
    }
  };
  fill(out.train, 0, n_train);
  fill(out.val, 1, n_val);
  fill(out.test, 2, n_test);
  return out;
}

Dataset generate_dataset(std::uint64_t base_seed, int n_train, int n_val, int n_test, const PhantomSpec& base) {
  const DatasetSplit specs = dataset_specs(base_seed, n_train, n_val, n_test, base);
  Dataset d;
  for (const auto& s : specs.train) d.train.push_back(generate(s));
  for (const auto& s : specs.val) d.val.push_back(generate(s));
  for (const auto& s : specs.test) d.test.push_back(generate(s));
  return d;
}

void write_case(const PhantomCase& c, const std::filesystem::path& case_dir) {
  std::filesystem::create_directories(case_dir);
  write_mivol(c.ct, case_dir / "ct.mivol");
  write_structure_set(c.truth, case_dir / "truth");
  std::ofstream f(case_dir / "case.json");
  f << c.meta.dump(2) << "\n";
}

PhantomCase read_case(const std::filesystem::path& case_dir) {
  PhantomCase c;
  c.ct = read_mivol(case_dir / "ct.mivol");
  c.truth = read_structure_set(case_dir / "truth");
  std::ifstream f(case_dir / "case.json");
  if (f) {
    try {
      c.meta = json::parse(f);
      c.id = c.meta.value("id", case_dir.filename().string());
      if (c.meta.contains("geometry")) c.geometry = geometry_from_json(c.meta.at("geometry"));
    } catch (const json::exception& e) {
      throw DataError("bad case record in " + case_dir.string() + ": " + e.what());
    }
  } else {
    c.id = case_dir.filename().string();
  }
  return c;
}

namespace {
constexpr std::array<const char*, 3> kSplitNames = {"train", "val", "test"};
}

void write_dataset(const Dataset& d, std::uint64_t base_seed, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json index{{"base_seed", base_seed}, {"splits", json::object()}};
  const std::array<const std::vector<PhantomCase>*, 3> splits = {&d.train, &d.val, &d.test};
  for (std::size_t s = 0; s < splits.size(); ++s) {
    json ids = json::array();
    for (const auto& c : *splits[s]) {
      write_case(c, dir / kSplitNames[s] / c.id);
      ids.push_back(c.id);
    }
    index["splits"][kSplitNames[s]] = ids;
  }
  std::ofstream f(dir / "index.json");
  f << index.dump(2) << "\n";
}

Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream f(dir / "index.json");
  if (!f) throw DataError("missing dataset index in " + dir.string());
  Dataset d;
  try {
    const json index = json::parse(f);
    const std::array<std::vector<PhantomCase>*, 3> splits = {&d.train, &d.val, &d.test};
    for (std::size_t s = 0; s < splits.size(); ++s) {
      if (!index.at("splits").contains(kSplitNames[s])) continue;
      for (const auto& id : index.at("splits").at(kSplitNames[s]))
        splits[s]->push_back(read_case(dir / kSplitNames[s] / id.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw DataError("bad dataset index in " + dir.string() + ": " + e.what());
  }
  return d;
}

}  // namespace ctvseg
