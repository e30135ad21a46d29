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
#include "ctvseg/metrics.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include <boost/math/special_functions/beta.hpp>

#include "ctvseg/disttf.hpp"

namespace ctvseg {

Mask surface_mask(const Mask& mask) {
  const Shape& s = mask.shape();
  Mask out(s, mask.spacing(), 0);
  auto bg = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    if (!s.contains({x, y, z})) return true;
    return mask(x, y, z) == 0;
  };
  for (std::int64_t z = 0; z < s.nz; ++z)
    for (std::int64_t y = 0; y < s.ny; ++y)
      for (std::int64_t x = 0; x < s.nx; ++x) {
        if (!mask(x, y, z)) continue;
        if (bg(x - 1, y, z) || bg(x + 1, y, z) || bg(x, y - 1, z) || bg(x, y + 1, z) || bg(x, y, z - 1) ||
            bg(x, y, z + 1))
          out(x, y, z) = 1;
      }
  return out;
}

std::vector<Index3> surface_voxels(const Mask& mask) {
  const Mask surf = surface_mask(mask);
  std::vector<Index3> out;
  for (std::size_t i = 0; i < surf.size(); ++i)
    if (surf[i]) out.push_back(surf.index_of(i));
  return out;
}

double dsc(const Mask& a, const Mask& b) {
  require_same_grid(a, b, "dsc");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool ia = a[i] != 0;
    const bool ib = b[i] != 0;
    na += ia;
    nb += ib;
    both += ia && ib;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

double asd(const Mask& a, const Mask& b) {
  require_same_grid(a, b, "asd");
  if (count_foreground(a) == 0 || count_foreground(b) == 0) throw DataError("asd: empty mask");
  const Mask sa = surface_mask(a);
  const Mask sb = surface_mask(b);
  // Distances to the nearest surface voxel of the other mask.
  const auto to_b = squared_distance_to_foreground(sb);
  const auto to_a = squared_distance_to_foreground(sa);
  double total = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i]) {
      total += std::sqrt(to_b[i]);
      ++n;
    }
    if (sb[i]) {
      total += std::sqrt(to_a[i]);
      ++n;
    }
  }
  return total / static_cast<double>(n);
}

double pearson_r(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw UsageError("pearson_r: length mismatch");
  if (x.size() < 3) throw UsageError("pearson_r: need at least 3 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double r_squared(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw UsageError("r_squared: length mismatch");
  if (x.size() < 3) throw UsageError("r_squared: need at least 3 points");
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (syy == 0.0 || sxx == 0.0) return 0.0;
  const double slope = sxy / sxx;
  const double intercept = my - slope * mx;
  double ss_res = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (slope * x[i] + intercept);
    ss_res += r * r;
  }
  return 1.0 - ss_res / syy;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw UsageError("student_t_two_sided_p: df must be positive");
  if (!std::isfinite(t)) return 0.0;
  const double x = df / (df + t * t);
  return boost::math::ibeta(0.5 * df, 0.5, x);
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw UsageError("paired_t_test: length mismatch");
  if (a.size() < 2) throw UsageError("paired_t_test: need at least 2 pairs");
  const std::size_t n = a.size();
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  TTestResult r;
  r.df = static_cast<int>(n - 1);
  if (sd == 0.0) {
    if (mean == 0.0) return r;
    r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    r.p = 0.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = student_t_two_sided_p(r.t, static_cast<double>(r.df));
  return r;
}

std::vector<EvalRow> evaluate_case(const StructureSet& pred, const StructureSet& truth,
                                   const std::map<StructureId, double>& quality, const std::string& case_id,
                                   const std::string& variant) {
  std::vector<EvalRow> rows;
  for (const auto& [id, truth_mask] : truth.masks()) {
    EvalRow row;
    row.case_id = case_id;
    row.structure = std::string(to_string(id));
    row.variant = variant;
    if (auto q = quality.find(id); q != quality.end()) row.quality = q->second;
    if (pred.has(id)) {
      const Mask& p = pred.get(id);
      require_same_grid(p, truth_mask, "evaluate_case");
      row.dsc = dsc(p, truth_mask);
      if (count_foreground(p) > 0 && count_foreground(truth_mask) > 0) row.asd_mm = asd(p, truth_mask);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream ss;
  ss << std::setprecision(17) << *v;
  return ss.str();
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw DataError("bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw DataError("bad number '" + s + "' in evaluation CSV");
  }
}

}  // namespace

void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows) {
  out << kEvalCsvHeader << "\n";
  for (const auto& r : rows)
    out << r.case_id << ',' << r.structure << ',' << r.variant << ',' << fmt_opt(r.dsc) << ',' << fmt_opt(r.asd_mm)
        << ',' << fmt_opt(r.quality) << "\n";
}

std::vector<EvalRow> read_eval_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kEvalCsvHeader) throw DataError("evaluation CSV: bad header");
  std::vector<EvalRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cols.push_back(cell);
    if (!line.empty() && line.back() == ',') cols.emplace_back();
    if (cols.size() != 6) throw DataError("evaluation CSV: expected 6 columns in '" + line + "'");
    rows.push_back({cols[0], cols[1], cols[2], parse_opt(cols[3]), parse_opt(cols[4]), parse_opt(cols[5])});
  }
  return rows;
}

MeanSd mean_sd(std::span<const double> values) {
  MeanSd r;
  r.n = values.size();
  if (values.empty()) return r;
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(r.n);
  if (r.n > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(r.n - 1));
  }
  return r;
}

std::map<std::string, StructureSummary> summarize_rows(const std::vector<EvalRow>& rows) {
  std::map<std::string, std::array<std::vector<double>, 3>> acc;
  for (const auto& r : rows) {
    auto& a = acc[r.structure];
    if (r.dsc) a[0].push_back(*r.dsc);
    if (r.asd_mm) a[1].push_back(*r.asd_mm);
    if (r.quality) a[2].push_back(*r.quality);
  }
  std::map<std::string, StructureSummary> out;
  for (const auto& [name, a] : acc) out[name] = {mean_sd(a[0]), mean_sd(a[1]), mean_sd(a[2])};
  return out;
}

}  // namespace ctvseg
