#pragma once

#include <cmath>
#include <vector>

#include "lfa/error.hpp"
#include "lfa/grid.hpp"

namespace lfa {

struct BilateralParams {
  int window = 3;  // s: full window width, odd
  double sigma_space = 1.0;
  double sigma_intensity = 0.1;

  void validate() const {
    if (window < 1 || window % 2 == 0)
      throw ValidationError("bilateral window must be a positive odd size, got " + std::to_string(window));
    if (!(sigma_space > 0.0) || !(sigma_intensity > 0.0))
      throw ValidationError("bilateral sigmas must be positive");
  }
};

/// Edge-preserving smoothing over a window×window neighbourhood. Neighbours
/// outside the grid do not contribute; weights are renormalized per pixel.
inline Image bilateral_filter(const Image& in, const BilateralParams& p = {}) {
  p.validate();
  const int rad = p.window / 2;
  const int side = p.window;
  std::vector<double> spatial(static_cast<std::size_t>(side) * side);
  for (int dy = -rad; dy <= rad; ++dy)
    for (int dx = -rad; dx <= rad; ++dx)
      spatial[(dy + rad) * side + (dx + rad)] =
          std::exp(-(dx * dx + dy * dy) / (2.0 * p.sigma_space * p.sigma_space));
  const double range_coeff = -1.0 / (2.0 * p.sigma_intensity * p.sigma_intensity);

  Image out(in.width(), in.height());
  for (int y = 0; y < in.height(); ++y) {
    const int y0 = std::max(0, y - rad), y1 = std::min(in.height() - 1, y + rad);
    for (int x = 0; x < in.width(); ++x) {
      const int x0 = std::max(0, x - rad), x1 = std::min(in.width() - 1, x + rad);
      const double center = in(x, y);
      double num = 0.0, den = 0.0;
      for (int yy = y0; yy <= y1; ++yy) {
        const double* ws = &spatial[(yy - y + rad) * side + (x0 - x + rad)];
        const float* row = &in(x0, yy);
        for (int xx = 0; xx <= x1 - x0; ++xx) {
          const double d = row[xx] - center;
          const double w = ws[xx] * std::exp(range_coeff * d * d);
          num += w * row[xx];
          den += w;
        }
      }
      out(x, y) = static_cast<float>(num / den);
    }
  }
  return out;
}

}  // namespace lfa
