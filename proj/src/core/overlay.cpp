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
#include "ctvseg/overlay.hpp"

#include <cmath>
#include <cstdio>
#include <iomanip>
#include <memory>
#include <sstream>

#include <png.h>

namespace ctvseg {

std::vector<std::uint8_t> slice_contour(const Mask& mask, std::int64_t z) {
  const Shape& s = mask.shape();
  std::vector<std::uint8_t> out(static_cast<std::size_t>(s.nx * s.ny), 0);
  auto fg = [&](std::int64_t x, std::int64_t y) {
    return x >= 0 && y >= 0 && x < s.nx && y < s.ny && mask(x, y, z) != 0;
  };
  for (std::int64_t y = 0; y < s.ny; ++y)
    for (std::int64_t x = 0; x < s.nx; ++x)
      if (fg(x, y) && (!fg(x - 1, y) || !fg(x + 1, y) || !fg(x, y - 1) || !fg(x, y + 1)))
        out[static_cast<std::size_t>(y * s.nx + x)] = 1;
  return out;
}

std::vector<std::int64_t> representative_slices(const Mask& mask) {
  const Shape& s = mask.shape();
  std::vector<std::int64_t> with_fg;
  for (std::int64_t z = 0; z < s.nz; ++z) {
    bool any = false;
    for (std::int64_t y = 0; y < s.ny && !any; ++y)
      for (std::int64_t x = 0; x < s.nx && !any; ++x) any = mask(x, y, z) != 0;
    if (any) with_fg.push_back(z);
  }
  if (with_fg.size() <= 3) return with_fg;
  const std::size_t n = with_fg.size();
  // Center of each third.
  return {with_fg[n / 6], with_fg[n / 2], with_fg[(5 * n) / 6]};
}

RgbImage render_overlay(const Volume& ct, const UncertaintySummary& summary, const Mask* truth, std::int64_t z,
                        const OverlayOptions& opts) {
  require_same_grid(ct, summary.mean, "render_overlay");
  if (truth) require_same_grid(ct, *truth, "render_overlay");
  const Shape& s = ct.shape();
  if (z < 0 || z >= s.nz) throw UsageError("render_overlay: slice out of range");
  const int k = std::max(1, opts.scale);
  RgbImage img;
  img.width = static_cast<int>(s.nx) * k;
  img.height = static_cast<int>(s.ny) * k;
  img.rgb.assign(static_cast<std::size_t>(img.width) * img.height * 3, 0);

  const auto mean_edge = slice_contour(summary.mean_contour, z);
  const auto truth_edge = truth ? slice_contour(*truth, z) : std::vector<std::uint8_t>{};
  const float span = std::max(opts.window_hi - opts.window_lo, 1e-6f);

  for (std::int64_t y = 0; y < s.ny; ++y)
    for (std::int64_t x = 0; x < s.nx; ++x) {
      const std::size_t p = static_cast<std::size_t>(y * s.nx + x);
      const float g = std::clamp((ct(x, y, z) - opts.window_lo) / span, 0.0f, 1.0f) * 255.0f;
      std::array<float, 3> c = {g, g, g};
      if (summary.band(x, y, z)) {
        const std::array<float, 3> yellow = {255.0f, 255.0f, 0.0f};
        for (int ch = 0; ch < 3; ++ch) c[ch] = (1.0f - opts.band_alpha) * c[ch] + opts.band_alpha * yellow[ch];
      }
      if (!truth_edge.empty() && truth_edge[p]) c = {255.0f, 0.0f, 0.0f};
      if (mean_edge[p]) c = {0.0f, 0.0f, 255.0f};
      for (int dy = 0; dy < k; ++dy)
        for (int dx = 0; dx < k; ++dx) {
          const std::size_t o =
              3 * (static_cast<std::size_t>(y * k + dy) * img.width + static_cast<std::size_t>(x * k + dx));
          for (int ch = 0; ch < 3; ++ch) img.rgb[o + ch] = static_cast<std::uint8_t>(std::lround(c[ch]));
        }
    }
  return img;
}

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
}  // namespace

void write_png(const RgbImage& image, const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.string().c_str(), "wb"));
  if (!fp) throw DataError("cannot open " + path.string() + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(image.width), static_cast<png_uint_32>(image.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < image.height; ++y) {
    auto* row = const_cast<png_bytep>(image.rgb.data() + static_cast<std::size_t>(y) * image.width * 3);
    png_write_row(png, row);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) throw DataError("cannot read PNG " + path.string());
  img.format = PNG_FORMAT_RGB;
  RgbImage out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.rgb.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.rgb.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string());
  }
  return out;
}

std::vector<std::filesystem::path> emit_overlays(const Volume& ct, const UncertaintySummary& summary,
                                                 const Mask* truth, const std::filesystem::path& out_dir,
                                                 const std::string& case_id, const OverlayOptions& opts) {
  std::filesystem::create_directories(out_dir);
  const Mask& guide = truth ? *truth : summary.mean_contour;
  std::vector<std::filesystem::path> written;
  for (std::int64_t z : representative_slices(guide)) {
    std::ostringstream name;
    name << case_id << "_z" << std::setw(3) << std::setfill('0') << z << ".png";
    const auto path = out_dir / name.str();
    write_png(render_overlay(ct, summary, truth, z, opts), path);
    written.push_back(path);
  }
  return written;
}

}  // namespace ctvseg
