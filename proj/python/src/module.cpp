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
// NumPy arrays cross the boundary in (z, y, x) order, which matches the
// x-fastest memory layout of Grid.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ctvseg/disttf.hpp"
#include "ctvseg/losses.hpp"
#include "ctvseg/metrics.hpp"
#include "ctvseg/phantom.hpp"
#include "ctvseg/preprocess.hpp"
#include "ctvseg/uncertainty.hpp"

namespace py = pybind11;
using namespace ctvseg;

namespace {

using SpacingTuple = std::tuple<double, double, double>;
const SpacingTuple default_spacing{1.0, 1.0, 1.0};

Spacing to_spacing(const SpacingTuple& t) { return {std::get<0>(t), std::get<1>(t), std::get<2>(t)}; }
SpacingTuple from_spacing(const Spacing& s) { return {s.dx, s.dy, s.dz}; }

template <typename T>
Grid<T> to_grid(const py::array_t<T, py::array::c_style | py::array::forcecast>& a, const SpacingTuple& sp) {
  if (a.ndim() != 3) throw UsageError("expected a 3D array in (z, y, x) order");
  const Shape s{a.shape(2), a.shape(1), a.shape(0)};
  return Grid<T>(s, to_spacing(sp), std::vector<T>(a.data(), a.data() + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Grid<T>& g) {
  const auto& s = g.shape();
  py::array_t<T> out({s.nz, s.ny, s.nx});
  std::copy(g.raw().begin(), g.raw().end(), out.mutable_data());
  return out;
}

Mask to_mask(const py::array& a, const SpacingTuple& sp) {
  using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
  return to_grid<std::uint8_t>(U8::ensure(a.attr("astype")("bool")), sp);
}

LossBatch batch(std::vector<double> p, std::vector<double> q, std::vector<double> w) {
  LossBatch b{std::move(p), std::move(q), std::move(w)};
  b.validate();
  return b;
}

py::dict structures_dict(const StructureSet& s) {
  py::dict d;
  for (const auto& [id, m] : s.masks()) d[py::str(std::string(to_string(id)))] = to_array(m).attr("astype")("bool");
  return d;
}

py::dict case_dict(const PhantomCase& c) {
  py::dict d;
  d["id"] = c.id;
  d["ct"] = to_array(c.ct);
  d["spacing"] = from_spacing(c.ct.spacing());
  d["structures"] = structures_dict(c.truth);
  d["meta"] = py::module_::import("json").attr("loads")(c.meta.dump());
  return d;
}

py::dict summary_dict(const UncertaintySummary& s) {
  py::dict d;
  d["mean"] = to_array(s.mean);
  d["variance"] = to_array(s.variance);
  d["lower"] = to_array(s.lower);
  d["upper"] = to_array(s.upper);
  d["mean_contour"] = to_array(s.mean_contour).attr("astype")("bool");
  d["lower_contour"] = to_array(s.lower_contour).attr("astype")("bool");
  d["upper_contour"] = to_array(s.upper_contour).attr("astype")("bool");
  d["band"] = to_array(s.band).attr("astype")("bool");
  return d;
}

McdoStack to_stack(const std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>>& samples) {
  McdoStack st;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    st.samples.push_back(to_grid<float>(samples[i], {1.0, 1.0, 1.0}));
    st.seeds.push_back(i);
  }
  return st;
}

}  // namespace

PYBIND11_MODULE(_ctvseg, m) {
  m.doc() = "Core volume, phantom, loss, distance and metric routines";

  py::register_exception<DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);

  m.def("structures", [] {
    std::vector<std::string> out;
    for (auto s : kAllStructures) out.emplace_back(to_string(s));
    return out;
  });

  m.def(
      "generate_phantom",
      [](std::uint64_t seed, std::uint64_t style) {
        PhantomSpec spec;
        spec.seed = seed;
        spec.style = style;
        return case_dict(generate(spec));
      },
      py::arg("seed"), py::arg("style") = 0);
  m.def("read_case", [](const std::filesystem::path& dir) { return case_dict(read_case(dir)); }, py::arg("case_dir"));

  m.def(
      "read_mivol",
      [](const std::filesystem::path& p) {
        const Volume v = read_mivol(p);
        return py::make_tuple(to_array(v), from_spacing(v.spacing()));
      },
      py::arg("path"));
  m.def(
      "write_mivol",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a, const std::filesystem::path& p,
         const SpacingTuple& sp) { write_mivol(to_grid<float>(a, sp), p); },
      py::arg("volume"), py::arg("path"), py::arg("spacing") = default_spacing);

  m.def("dice_loss", [](std::vector<double> p, std::vector<double> q, std::vector<double> w) {
    return dice_loss(batch(std::move(p), std::move(q), std::move(w)));
  }, py::arg("p"), py::arg("q"), py::arg("w") = std::vector<double>{});
  m.def("dice_loss_grad", [](std::vector<double> p, std::vector<double> q, std::vector<double> w) {
    return dice_loss_grad(batch(std::move(p), std::move(q), std::move(w)));
  }, py::arg("p"), py::arg("q"), py::arg("w") = std::vector<double>{});
  m.def("sqrt_dice_loss", [](std::vector<double> p, std::vector<double> q, double eps) {
    return sqrt_dice_loss(batch(std::move(p), std::move(q), {}), eps);
  }, py::arg("p"), py::arg("q"), py::arg("epsilon") = LossConfig{}.epsilon);
  m.def("sqrt_dice_loss_grad", [](std::vector<double> p, std::vector<double> q, double eps) {
    return sqrt_dice_loss_grad(batch(std::move(p), std::move(q), {}), eps);
  }, py::arg("p"), py::arg("q"), py::arg("epsilon") = LossConfig{}.epsilon);

  m.def(
      "distance_target",
      [](const py::array& mask, const SpacingTuple& sp) { return to_array(distance_target(to_mask(mask, sp))); },
      py::arg("mask"), py::arg("spacing") = default_spacing, "Distance in mm from each voxel to the nearest foreground voxel");
  m.def(
      "dsc", [](const py::array& a, const py::array& b) { return dsc(to_mask(a, default_spacing), to_mask(b, default_spacing)); },
      py::arg("a"), py::arg("b"));
  m.def(
      "asd",
      [](const py::array& a, const py::array& b, const SpacingTuple& sp) { return asd(to_mask(a, sp), to_mask(b, sp)); },
      py::arg("a"), py::arg("b"), py::arg("spacing") = default_spacing);
  m.def("pearson_r", [](const std::vector<double>& x, const std::vector<double>& y) { return pearson_r(x, y); });
  m.def(
      "paired_t_test",
      [](const std::vector<double>& a, const std::vector<double>& b) {
        const auto r = paired_t_test(a, b);
        return py::make_tuple(r.t, r.p, r.df);
      },
      py::arg("a"), py::arg("b"), "Returns (t, p, df) for the two-sided paired test");

  m.def(
      "ahe",
      [](const py::array_t<float, py::array::c_style | py::array::forcecast>& v, int tiles_x, int tiles_y, double clip,
         int bins) { return to_array(ahe(to_grid<float>(v, default_spacing), AheParams{tiles_x, tiles_y, clip, bins})); },
      py::arg("volume"), py::arg("tiles_x") = 8, py::arg("tiles_y") = 8, py::arg("clip_limit") = 0.01, py::arg("bins") = 256);

  m.def("summarize", [](const std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>>& samples) {
    return summary_dict(summarize(to_stack(samples)));
  }, py::arg("samples"));
  m.def("contour_quality", [](const std::vector<py::array_t<float, py::array::c_style | py::array::forcecast>>& samples) {
    return contour_quality(to_stack(samples));
  }, py::arg("samples"), "Mean DSC of each binarized sample against the mean contour; None when that contour is empty");
}
