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
#include "ctvseg/uncertainty.hpp"

#include <cmath>

#include "ctvseg/metrics.hpp"

namespace ctvseg {

void McdoStack::validate() const {
  if (samples.empty()) throw DataError("MCDO stack is empty");
  for (const auto& s : samples) {
    require_same_grid(samples.front(), s, "MCDO stack");
    for (float v : s.raw())
      if (!(v >= 0.0f && v <= 1.0f)) throw DataError("MCDO sample value outside [0, 1]");
  }
}

UncertaintySummary summarize(const McdoStack& stack) {
  stack.validate();
  if (stack.samples.size() < 2) throw DataError("summarize: need at least 2 MCDO samples");
  const Volume& first = stack.samples.front();
  const std::size_t n = first.size();
  const double t = static_cast<double>(stack.samples.size());

  // Two-pass moments in double.
  std::vector<double> mean(n, 0.0), var(n, 0.0);
  for (const auto& s : stack.samples)
    for (std::size_t i = 0; i < n; ++i) mean[i] += s[i];
  for (double& m : mean) m /= t;
  for (const auto& s : stack.samples)
    for (std::size_t i = 0; i < n; ++i) {
      const double d = s[i] - mean[i];
      var[i] += d * d;
    }
  for (double& v : var) v /= t;

  UncertaintySummary out;
  out.mean = Volume(first.shape(), first.spacing());
  out.variance = Volume(first.shape(), first.spacing());
  out.lower = Volume(first.shape(), first.spacing());
  out.upper = Volume(first.shape(), first.spacing());
  for (std::size_t i = 0; i < n; ++i) {
    const double sd = std::sqrt(var[i]);
    const auto m = static_cast<float>(mean[i]);
    out.mean[i] = m;
    out.variance[i] = static_cast<float>(var[i]);
    // Bounds are ordered against the stored (float) mean so lower <= mean <= upper holds exactly.
    out.lower[i] = std::min(m, static_cast<float>(std::clamp(mean[i] - kBoundZ * sd, 0.0, 1.0)));
    out.upper[i] = std::max(m, static_cast<float>(std::clamp(mean[i] + kBoundZ * sd, 0.0, 1.0)));
  }
  out.mean_contour = binarize(out.mean, kContourThreshold);
  out.lower_contour = binarize(out.lower, kContourThreshold);
  out.upper_contour = binarize(out.upper, kContourThreshold);
  out.band = Mask(first.shape(), first.spacing(), 0);
  for (std::size_t i = 0; i < n; ++i) out.band[i] = out.upper_contour[i] && !out.lower_contour[i];
  return out;
}

std::optional<double> contour_quality(const McdoStack& stack, const UncertaintySummary& summary) {
  if (stack.samples.size() < 2) throw DataError("contour_quality: need at least 2 MCDO samples");
  if (count_foreground(summary.mean_contour) == 0) return std::nullopt;
  double acc = 0.0;
  for (const auto& s : stack.samples) acc += dsc(binarize(s, kContourThreshold), summary.mean_contour);
  return acc / static_cast<double>(stack.samples.size());
}

std::optional<double> contour_quality(const McdoStack& stack) { return contour_quality(stack, summarize(stack)); }

void write_summary(const UncertaintySummary& s, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_mivol(s.mean, dir / "mean.mivol");
  write_mivol(s.variance, dir / "variance.mivol");
  write_mivol(s.lower, dir / "lower.mivol");
  write_mivol(s.upper, dir / "upper.mivol");
  write_mask(s.mean_contour, dir / "mean_contour.mivol");
  write_mask(s.band, dir / "band.mivol");
}

UncertaintySummary read_summary(const std::filesystem::path& dir) {
  UncertaintySummary s;
  s.mean = read_mivol(dir / "mean.mivol");
  s.variance = read_mivol(dir / "variance.mivol");
  s.lower = read_mivol(dir / "lower.mivol");
  s.upper = read_mivol(dir / "upper.mivol");
  s.mean_contour = read_mask(dir / "mean_contour.mivol");
  s.band = read_mask(dir / "band.mivol");
  s.lower_contour = binarize(s.lower, kContourThreshold);
  s.upper_contour = binarize(s.upper, kContourThreshold);
  return s;
}

}  // namespace ctvseg
