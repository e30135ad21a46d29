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

#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ctvseg/volcore.hpp"

namespace ctvseg {

// Foreground voxels with at least one background 6-neighbor; voxels outside
// the grid count as background.
std::vector<Index3> surface_voxels(const Mask& mask);
Mask surface_mask(const Mask& mask);

// 2|a∩b| / (|a|+|b|); 1.0 when both are empty.
double dsc(const Mask& a, const Mask& b);

// Symmetric average surface distance in millimeters between voxel centers.
// Throws DataError when either mask is empty.
double asd(const Mask& a, const Mask& b);

double pearson_r(std::span<const double> x, std::span<const double> y);
// Coefficient of determination of the least-squares line of y on x.
double r_squared(std::span<const double> x, std::span<const double> y);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
};

// Paired two-sided Student t-test on a - b.
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// Two-sided tail probability P(|T| >= |t|) for Student t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct EvalRow {
  std::string case_id;
  std::string structure;
  std::string variant;
  std::optional<double> dsc;
  std::optional<double> asd_mm;
  std::optional<double> quality;

  bool operator==(const EvalRow&) const = default;
};

// One row per structure in truth. Structures absent from pred, or empty on
// either side for ASD, yield rows with missing metrics.
std::vector<EvalRow> evaluate_case(const StructureSet& pred, const StructureSet& truth,
                                   const std::map<StructureId, double>& quality, const std::string& case_id,
                                   const std::string& variant = "");

inline constexpr const char* kEvalCsvHeader = "case,structure,variant,dsc,asd_mm,quality";
void write_eval_csv(std::ostream& out, const std::vector<EvalRow>& rows);
std::vector<EvalRow> read_eval_csv(std::istream& in);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};
MeanSd mean_sd(std::span<const double> values);

// Per-structure mean and sample SD of DSC and ASD over rows with values.
struct StructureSummary {
  MeanSd dsc;
  MeanSd asd_mm;
  MeanSd quality;
};
std::map<std::string, StructureSummary> summarize_rows(const std::vector<EvalRow>& rows);

}  // namespace ctvseg
