#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <limits>
#include <vector>

#include "lfa/dataset.hpp"
#include "lfa/error.hpp"
#include "lfa/extraction.hpp"
#include "lfa/grid.hpp"
#include "lfa/inpainting.hpp"
#include "lfa/png_io.hpp"

namespace lfa::attention {

struct AttentionMap {
  Image values;          // mean prediction per pixel; 0 where uncovered
  Grid<int> coverage;    // number of writes per pixel
  int stride = 0;

  /// Covered pixel with the lowest value (first in row-major order on ties).
  Point argmin() const {
    Point best{-1, -1};
    float v = std::numeric_limits<float>::infinity();
    for (int y = 0; y < values.height(); ++y)
      for (int x = 0; x < values.width(); ++x)
        if (coverage(x, y) > 0 && values(x, y) < v) {
          v = values(x, y);
          best = {x, y};
        }
    return best;
  }

  /// Min and max over covered pixels.
  std::pair<float, float> range() const {
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < values.size(); ++i)
      if (coverage.data()[i] > 0) {
        lo = std::min(lo, values.data()[i]);
        hi = std::max(hi, values.data()[i]);
      }
    return {lo, hi};
  }
};

/// Origins 0, stride, 2*stride, ... up to extent - patch, with the last valid
/// origin appended so the far border is covered too.
inline std::vector<int> lattice(int extent, int patch, int stride) {
  std::vector<int> out;
  for (int o = 0; o <= extent - patch; o += stride) out.push_back(o);
  if (out.empty() || out.back() != extent - patch) out.push_back(extent - patch);
  return out;
}

/// Inpaints each lattice patch in turn, scores the modified image, and writes
/// the score over the mask footprint. Overlapping writes are averaged.
template <inpainting::PatchInpainter I, extraction::ImageScorer C>
AttentionMap attention_map(const I& inpainter, const C& classifier, const ImageRecord& record,
                           const MaskSpec& mask_spec, int stride, float fill_value = 0.0f) {
  const int p = mask_spec.patch_size();
  if (stride < 1) throw ValidationError("stride must be >= 1");
  if (stride > record.width() || stride > record.height())
    throw ValidationError("stride " + std::to_string(stride) + " exceeds image '" + record.image_id + "'");
  if (p > record.width() || p > record.height())
    throw GeometryError("patch size exceeds image '" + record.image_id + "'");

  const BoundingBox hole = mask_spec.mask_box();
  std::vector<double> sum(record.pixels.size(), 0.0);
  AttentionMap map{Image(record.width(), record.height()), Grid<int>(record.width(), record.height()), stride};
  for (int oy : lattice(record.height(), p, stride))
    for (int ox : lattice(record.width(), p, stride)) {
      const Patch patch = get_patch_at(record, {ox, oy}, p);
      const Patch filled = inpainting::inpaint(inpainter, apply_center_mask(patch, mask_spec, fill_value));
      const double score = classifier.predict(patch2img(record, filled));
      for (int y = oy + hole.y; y < oy + hole.bottom(); ++y)
        for (int x = ox + hole.x; x < ox + hole.right(); ++x) {
          sum[static_cast<std::size_t>(y) * record.width() + x] += score;
          ++map.coverage(x, y);
        }
    }
  for (std::size_t i = 0; i < sum.size(); ++i)
    if (map.coverage.data()[i] > 0) map.values.data()[i] = static_cast<float>(sum[i] / map.coverage.data()[i]);
  return map;
}

/// Jet colormap on t in [0,1]: dark blue at 0, dark red at 1.
inline png::Rgb jet(double t) {
  t = std::clamp(t, 0.0, 1.0);
  auto channel = [t](double offset) {
    const double v = 1.5 - std::abs(4.0 * t - offset);
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
  };
  return {channel(3.0), channel(2.0), channel(1.0)};
}

struct RenderOptions {
  double alpha = 0.5;  // weight of the colormap over the grayscale base
};

/// Grayscale image with the min-max normalized map blended on top of covered
/// pixels. A constant map renders at the colormap minimum.
inline png::RgbImage overlay(const AttentionMap& map, const ImageRecord& record, const RenderOptions& opt = {}) {
  if (!map.values.same_shape(record.pixels)) throw ValidationError("attention map and image differ in size");
  const auto [lo, hi] = map.range();
  png::RgbImage out(record.width(), record.height());
  for (int y = 0; y < record.height(); ++y)
    for (int x = 0; x < record.width(); ++x) {
      const double g = 255.0 * clamp01(record.pixels(x, y));
      const auto gray = static_cast<std::uint8_t>(std::lround(g));
      if (map.coverage(x, y) == 0) {
        out(x, y) = {gray, gray, gray};
        continue;
      }
      const double t = hi > lo ? (map.values(x, y) - lo) / (hi - lo) : 0.0;
      const png::Rgb c = jet(t);
      auto mix = [&](std::uint8_t v) {
        return static_cast<std::uint8_t>(std::lround(opt.alpha * v + (1.0 - opt.alpha) * g));
      };
      out(x, y) = {mix(c[0]), mix(c[1]), mix(c[2])};
    }
  return out;
}

/// Writes the overlay to `out_path`.
inline void render_heatmap(const AttentionMap& map, const ImageRecord& record, const std::filesystem::path& out_path,
                           const RenderOptions& opt = {}) {
  png::write_rgb(out_path, overlay(map, record, opt));
}

/// Raw map values as a 16-bit grayscale PNG.
inline void write_raw(const AttentionMap& map, const std::filesystem::path& out_path) {
  png::write_gray(out_path, map.values, 16);
}

}  // namespace lfa::attention
