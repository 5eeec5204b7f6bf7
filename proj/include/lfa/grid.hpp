#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lfa/error.hpp"

namespace lfa {

/// Integer pixel coordinate (column x, row y).
struct Point {
  int x = 0;
  int y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Axis-aligned box: top-left corner plus extent, all in pixels.
struct BoundingBox {
  int x = 0;
  int y = 0;
  int w = 0;
  int h = 0;

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;

  int right() const { return x + w; }
  int bottom() const { return y + h; }
  bool empty() const { return w <= 0 || h <= 0; }
  double center_x() const { return x + 0.5 * w; }
  double center_y() const { return y + 0.5 * h; }
  long long area() const { return empty() ? 0 : static_cast<long long>(w) * h; }

  bool fits_in(int width, int height) const {
    return !empty() && x >= 0 && y >= 0 && right() <= width && bottom() <= height;
  }
};

inline BoundingBox intersect(const BoundingBox& a, const BoundingBox& b) {
  const int x0 = std::max(a.x, b.x);
  const int y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.right(), b.right());
  const int y1 = std::min(a.bottom(), b.bottom());
  if (x1 <= x0 || y1 <= y0) return {};
  return {x0, y0, x1 - x0, y1 - y0};
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const long long inter = intersect(a, b).area();
  const long long uni = a.area() + b.area() - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// Dense row-major 2-D grid. Used for images (float), masks (uint8) and
/// accumulation buffers.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(checked_extent(width, height)), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int x, int y) {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }
  const T& operator()(int x, int y) const {
    assert(x >= 0 && x < width_ && y >= 0 && y < height_);
    return data_[static_cast<std::size_t>(y) * width_ + x];
  }

  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  bool same_shape(const Grid<U>& other) const {
    return width_ == other.width() && height_ == other.height();
  }

  /// Copy of the sub-grid [x, x+w) × [y, y+h). Throws GeometryError when the
  /// window leaves the grid.
  Grid crop(int x, int y, int w, int h) const {
    if (!BoundingBox{x, y, w, h}.fits_in(width_, height_)) {
      throw GeometryError("crop window (" + std::to_string(x) + "," + std::to_string(y) + "," +
                          std::to_string(w) + "," + std::to_string(h) + ") outside " +
                          std::to_string(width_) + "x" + std::to_string(height_) + " grid");
    }
    Grid out(w, h);
    for (int r = 0; r < h; ++r) {
      std::copy_n(&(*this)(x, y + r), w, &out(0, r));
    }
    return out;
  }
  Grid crop(const BoundingBox& b) const { return crop(b.x, b.y, b.w, b.h); }

  /// Writes `src` into this grid with its top-left corner at (x, y).
  void paste(const Grid& src, int x, int y) {
    if (!BoundingBox{x, y, src.width(), src.height()}.fits_in(width_, height_)) {
      throw GeometryError("paste footprint at (" + std::to_string(x) + "," + std::to_string(y) +
                          ") of size " + std::to_string(src.width()) + "x" +
                          std::to_string(src.height()) + " outside " + std::to_string(width_) +
                          "x" + std::to_string(height_) + " grid");
    }
    for (int r = 0; r < src.height(); ++r) {
      std::copy_n(&src(0, r), src.width(), &(*this)(x, y + r));
    }
  }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  static long long checked_extent(int w, int h) {
    if (w < 0 || h < 0) throw ValidationError("negative grid extent");
    return static_cast<long long>(w) * h;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

using Image = Grid<float>;
using Mask = Grid<std::uint8_t>;

/// Tight box around cells where `pred` holds; empty box if none.
template <class T, class Pred>
BoundingBox tight_bbox(const Grid<T>& g, Pred pred) {
  int x0 = g.width(), y0 = g.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < g.height(); ++y) {
    for (int x = 0; x < g.width(); ++x) {
      if (pred(g(x, y))) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) return {};
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

inline float clamp01(float v) { return std::clamp(v, 0.0f, 1.0f); }

}  // namespace lfa
