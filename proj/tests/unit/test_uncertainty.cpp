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
#include <doctest.h>

#include <algorithm>
#include <random>

#include "ctvseg/uncertainty.hpp"
#include "test_util.hpp"

using namespace ctvseg;
using namespace ctvseg::testing;

namespace {

McdoStack random_stack(int t, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  McdoStack s;
  for (int i = 0; i < t; ++i) {
    Volume v(Shape{6, 5, 4}, Spacing{});
    for (auto& x : v.raw()) x = u(gen);
    s.samples.push_back(v);
  }
  return s;
}

bool subset(const Mask& a, const Mask& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] && !b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("identical samples: zero variance, empty band, quality 1") {
  McdoStack s = random_stack(1, 1);
  s.samples.resize(kDefaultMcdoSamples, s.samples[0]);
  const auto u = summarize(s);
  for (float v : u.variance.raw()) CHECK(v == 0.0f);
  CHECK(count_foreground(u.band) == 0);
  CHECK(u.mean == s.samples[0]);
  CHECK(contour_quality(s).value() == 1.0);
}

TEST_CASE("Bernoulli moments and the 1.96 rule") {
  McdoStack s;
  for (int t = 0; t < 50; ++t) s.samples.emplace_back(Shape{1, 1, 1}, Spacing{}, static_cast<float>(t % 2));
  const auto u = summarize(s);
  CHECK(u.mean[0] == 0.5f);
  CHECK(u.variance[0] == doctest::Approx(0.25));
  CHECK(u.lower[0] == 0.0f);
  CHECK(u.upper[0] == 1.0f);

  // Two-point distribution with mean 0.5 and sd 0.1.
  McdoStack b;
  for (int t = 0; t < 2; ++t) b.samples.emplace_back(Shape{1, 1, 1}, Spacing{}, t ? 0.6f : 0.4f);
  const auto ub = summarize(b);
  CHECK(ub.lower[0] == doctest::Approx(0.304).epsilon(1e-5));
  CHECK(ub.upper[0] == doctest::Approx(0.696).epsilon(1e-5));
}

TEST_CASE("nesting and permutation invariance") {
  for (int trial = 0; trial < 20; ++trial) {
    McdoStack s = random_stack(7, 10 + trial);
    const auto u = summarize(s);
    bool ordered = true;
    for (std::size_t i = 0; i < u.mean.size(); ++i)
      ordered = ordered && u.lower[i] <= u.mean[i] && u.mean[i] <= u.upper[i];
    CHECK(ordered);
    CHECK(subset(u.lower_contour, u.mean_contour));
    CHECK(subset(u.mean_contour, u.upper_contour));

    std::mt19937_64 gen(trial);
    McdoStack p = s;
    std::shuffle(p.samples.begin(), p.samples.end(), gen);
    const auto up = summarize(p);
    bool close = true;
    for (std::size_t i = 0; i < u.mean.size(); ++i)
      close = close && std::abs(u.mean[i] - up.mean[i]) < 1e-6f && std::abs(u.variance[i] - up.variance[i]) < 1e-6f;
    CHECK(close);
    const double q = contour_quality(s).value_or(-1);
    CHECK(q >= 0.0);
    CHECK(q <= 1.0);
  }
}

TEST_CASE("contour quality edge cases") {
  // Mean contour from two samples, third sample disjoint: quality is the mean of per-sample DSCs.
  McdoStack s;
  for (int t = 0; t < 2; ++t) s.samples.emplace_back(Shape{4, 1, 1}, Spacing{}, 0.0f);
  s.samples[0][0] = s.samples[1][0] = 1.0f;
  CHECK(contour_quality(s).value() == 1.0);
  McdoStack z;
  for (int t = 0; t < 3; ++t) z.samples.emplace_back(Shape{4, 1, 1}, Spacing{}, 0.0f);
  CHECK_FALSE(contour_quality(z).has_value());
  // Every sample disjoint from the mean contour.
  McdoStack d;
  for (int t = 0; t < 4; ++t) {
    Volume v(Shape{8, 1, 1}, Spacing{}, 0.0f);
    v[0] = 0.6f;
    v[1] = 0.6f;
    d.samples.push_back(v);
  }
  d.samples[0][0] = 0.4f;  // mean at 0 stays 0.55
  CHECK(contour_quality(d).value() < 1.0);

  McdoStack one = random_stack(1, 3);
  CHECK_THROWS_AS(summarize(one), DataError);
  McdoStack bad = random_stack(3, 4);
  bad.samples[1][0] = 1.5f;
  CHECK_THROWS_AS(summarize(bad), DataError);
}

TEST_CASE("summary persists") {
  const auto dir = temp_dir("summary");
  const auto u = summarize(random_stack(5, 8));
  write_summary(u, dir);
  const auto r = read_summary(dir);
  CHECK(r.mean == u.mean);
  CHECK(r.variance == u.variance);
  CHECK(r.band == u.band);
  CHECK(r.lower_contour == u.lower_contour);
}
