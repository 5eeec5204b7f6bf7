#pragma once

#include <cmath>
#include <cstdio>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "lfa/dataset.hpp"
#include "lfa/error.hpp"
#include "lfa/grid.hpp"
#include "lfa/png_io.hpp"
#include "lfa/rng.hpp"

namespace lfa::phantom {

/// Parameters of the synthetic chest phantom. Nodules are truncated Gaussian
/// blobs of peak `amplitude` supported on a disc of `radius` pixels (rounded
/// to whole pixels).
struct PhantomSpec {
  int image_size = 128;
  double base_level = 0.55;
  double field_amplitude = 0.08;  // low-frequency background variation
  double lung_darkening = 0.22;
  double rib_amplitude = 0.07;
  double rib_period = 0.0;  // pixels; 0 selects image_size / 7
  double noise_sigma = 0.01;
  double min_amplitude = 0.1;
  double max_amplitude = 0.4;
  double min_radius = 3.0;
  double max_radius = 8.0;

  void validate() const {
    if (image_size < 16) throw ValidationError("phantom image_size must be at least 16");
    if (noise_sigma < 0) throw ValidationError("phantom noise_sigma must be non-negative");
    if (!(min_amplitude > 0 && min_amplitude <= max_amplitude))
      throw ValidationError("phantom amplitude range invalid");
    if (!(min_radius > 0 && min_radius <= max_radius))
      throw ValidationError("phantom radius range invalid");
  }
};

struct Phantom {
  ImageRecord record;  // nodule_label = 0, lung_mask set
  Mask lung_mask;
};

/// Whole-pixel support radius of a blob with nominal radius `radius`.
inline int support_radius(double radius) { return std::max(1, static_cast<int>(std::lround(radius))); }

/// Relative nodule intensity at distance `d` from the center: a Gaussian that
/// falls to 1/4 of its peak on the support boundary and is zero beyond it.
inline double blob_profile(double d, double radius) {
  const double r = support_radius(radius);
  if (d > r) return 0.0;
  const double t = d / r;
  return std::exp(-1.3862943611198906 * t * t);  // ln 4
}

namespace detail {

struct Layout {
  double lx, ly, rx, ry;        // lung centers
  double ax_l, ay_l, ax_r, ay_r;  // semi-axes
  double rib_phase, rib_curvature, rib_period;
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves;
};

inline Layout draw_layout(const PhantomSpec& spec, std::uint64_t seed) {
  Rng rng = make_rng({seed, hash_string("phantom_layout")});
  const double s = spec.image_size;
  Layout l;
  l.lx = s * uniform_real(rng, 0.28, 0.32);
  l.ly = s * uniform_real(rng, 0.48, 0.52);
  l.rx = s * uniform_real(rng, 0.68, 0.72);
  l.ry = s * uniform_real(rng, 0.48, 0.52);
  l.ax_l = s * uniform_real(rng, 0.14, 0.17);
  l.ay_l = s * uniform_real(rng, 0.29, 0.34);
  l.ax_r = s * uniform_real(rng, 0.14, 0.17);
  l.ay_r = s * uniform_real(rng, 0.29, 0.34);
  l.rib_phase = uniform_real(rng, 0.0, 6.283185307179586);
  l.rib_curvature = uniform_real(rng, 0.6, 1.4) / s;
  l.rib_period = (spec.rib_period > 0 ? spec.rib_period : s / 7.0) * uniform_real(rng, 0.9, 1.1);
  for (int i = 0; i < 3; ++i) {
    l.waves.push_back({uniform_real(rng, -1.5, 1.5) / s, uniform_real(rng, -1.5, 1.5) / s,
                       uniform_real(rng, 0.0, 6.283185307179586),
                       spec.field_amplitude / 3.0 * uniform_real(rng, 0.5, 1.0)});
  }
  return l;
}

/// Signed ellipse coordinate: < 1 inside.
inline double ellipse_radius(double x, double y, double cx, double cy, double ax, double ay) {
  const double dx = (x - cx) / ax;
  const double dy = (y - cy) / ay;
  return std::sqrt(dx * dx + dy * dy);
}

/// Soft lung membership in [0,1], ramping over ~3 px at the boundary.
inline double lung_weight(const Layout& l, double x, double y) {
  const auto soft = [](double r, double a) {
    const double d = (1.0 - r) * a;  // approx. distance inside the boundary in px
    return std::clamp(0.5 + d / 3.0, 0.0, 1.0);
  };
  const double wl = soft(ellipse_radius(x, y, l.lx, l.ly, l.ax_l, l.ay_l), std::min(l.ax_l, l.ay_l));
  const double wr = soft(ellipse_radius(x, y, l.rx, l.ry, l.ax_r, l.ay_r), std::min(l.ax_r, l.ay_r));
  return std::max(wl, wr);
}

}  // namespace detail

inline Mask lung_mask(const PhantomSpec& spec, std::uint64_t seed) {
  const auto l = detail::draw_layout(spec, seed);
  Mask m(spec.image_size, spec.image_size);
  for (int y = 0; y < spec.image_size; ++y)
    for (int x = 0; x < spec.image_size; ++x) {
      const bool in = detail::ellipse_radius(x, y, l.lx, l.ly, l.ax_l, l.ay_l) < 1.0 ||
                      detail::ellipse_radius(x, y, l.rx, l.ry, l.ax_r, l.ay_r) < 1.0;
      m(x, y) = in ? 1 : 0;
    }
  return m;
}

/// Noise-free background: smooth field, darker lungs, rib bands over the lungs.
inline Image background_field(const PhantomSpec& spec, std::uint64_t seed) {
  const auto l = detail::draw_layout(spec, seed);
  const double two_pi = 6.283185307179586;
  Image img(spec.image_size, spec.image_size);
  for (int y = 0; y < spec.image_size; ++y) {
    for (int x = 0; x < spec.image_size; ++x) {
      double v = spec.base_level;
      for (const auto& w : l.waves) v += w.amp * std::cos(two_pi * (w.fx * x + w.fy * y) + w.phase);
      const double lw = detail::lung_weight(l, x, y);
      const double side_cx = x < spec.image_size / 2 ? l.lx : l.rx;
      const double bend = l.rib_curvature * (x - side_cx) * (x - side_cx);
      const double rib = 0.5 * (1.0 + std::cos(two_pi * (y + bend) / l.rib_period + l.rib_phase));
      v += lw * (-spec.lung_darkening + spec.rib_amplitude * rib * rib);
      img(x, y) = clamp01(static_cast<float>(v));
    }
  }
  return img;
}

inline Phantom generate_phantom(const PhantomSpec& spec, std::uint64_t seed) {
  spec.validate();
  Phantom p;
  p.lung_mask = lung_mask(spec, seed);
  Image img = background_field(spec, seed);
  if (spec.noise_sigma > 0) {
    Rng rng = make_rng({seed, hash_string("phantom_noise")});
    for (auto& v : img.values()) v = clamp01(static_cast<float>(v + spec.noise_sigma * normal(rng)));
  }
  p.record.image_id = "phantom_" + std::to_string(seed);
  p.record.patient_id = p.record.image_id;
  p.record.pixels = std::move(img);
  p.record.nodule_label = 0;
  p.record.lung_mask = p.lung_mask;
  p.record.source_bit_depth = 16;
  return p;
}

struct Implant {
  ImageRecord record;
  BoundingBox bbox;
  Point center;
  Image blob;  // unclipped additive blob, full image size
};

/// Adds a blob centered at `center` (pixel coordinates) and returns the
/// clipped image plus the tight box where the blob exceeds 1% of its peak.
inline Implant implant_blob_at(const ImageRecord& record, Point center, double amplitude,
                               double radius) {
  if (!(amplitude > 0.0)) throw ValidationError("degenerate blob: amplitude must be positive");
  if (!(radius > 0.0)) throw ValidationError("degenerate blob: radius must be positive");
  Implant out{record, {}, center, Image(record.width(), record.height())};
  const int r = support_radius(radius);
  for (int y = center.y - r; y <= center.y + r; ++y) {
    for (int x = center.x - r; x <= center.x + r; ++x) {
      if (!record.pixels.contains(x, y)) continue;
      const double d = std::hypot(x - center.x, y - center.y);
      out.blob(x, y) = static_cast<float>(amplitude * blob_profile(d, radius));
    }
  }
  for (int y = 0; y < record.height(); ++y)
    for (int x = 0; x < record.width(); ++x)
      out.record.pixels(x, y) = clamp01(record.pixels(x, y) + out.blob(x, y));
  const float cut = static_cast<float>(0.01 * amplitude);
  out.bbox = tight_bbox(out.blob, [cut](float v) { return v > cut; });
  out.record.nodule_label = 1;
  out.record.bboxes.push_back(out.bbox);
  return out;
}

/// Centers whose radius-`radius` disc lies entirely inside the mask.
inline std::vector<Point> admissible_centers(const Mask& mask, double radius) {
  const int r = support_radius(radius);
  std::vector<Point> out;
  for (int y = r; y < mask.height() - r; ++y) {
    for (int x = r; x < mask.width() - r; ++x) {
      bool ok = true;
      for (int dy = -r; dy <= r && ok; ++dy)
        for (int dx = -r; dx <= r && ok; ++dx)
          if (dx * dx + dy * dy <= r * r && !mask(x + dx, y + dy)) ok = false;
      if (ok) out.push_back({x, y});
    }
  }
  return out;
}

/// Implants a blob at a uniformly drawn admissible lung position.
inline Implant implant_blob(const ImageRecord& record, const Mask& lung_mask, double amplitude,
                            double radius, std::uint64_t seed) {
  if (!(amplitude > 0.0)) throw ValidationError("degenerate blob: amplitude must be positive");
  if (!lung_mask.same_shape(record.pixels)) throw ValidationError("lung mask shape differs from image");
  const auto centers = admissible_centers(lung_mask, radius);
  if (centers.empty())
    throw ValidationError("no admissible blob center: lung mask cannot hold a disc of radius " +
                          std::to_string(radius));
  Rng rng = make_rng({seed, hash_string("implant_blob")});
  const auto c = centers[uniform_int(rng, 0, static_cast<long long>(centers.size()) - 1)];
  return implant_blob_at(record, c, amplitude, radius);
}

/// Draws amplitude and radius from the spec ranges and implants.
inline Implant implant_random_blob(const ImageRecord& record, const Mask& lung_mask,
                                   const PhantomSpec& spec, std::uint64_t seed) {
  Rng rng = make_rng({seed, hash_string("blob_params")});
  const double a = uniform_real(rng, spec.min_amplitude, spec.max_amplitude);
  const double rad = uniform_real(rng, spec.min_radius, spec.max_radius);
  return implant_blob(record, lung_mask, a, rad, seed);
}

/// One record of a generated dataset, with its noise-free ground truth.
struct PhantomSample {
  ImageRecord record;
  Image clean;  // image before the blob was added (equals record.pixels for negatives)
};

inline std::string phantom_image_id(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05d", index);
  return buf;
}

/// Builds `n` phantom records in memory. Exactly round(n * nodule_fraction)
/// records carry a blob; patients own consecutive groups of four images.
inline std::vector<PhantomSample> generate_samples(int n, double nodule_fraction,
                                                   const PhantomSpec& spec, std::uint64_t seed) {
  if (n < 1) throw ValidationError("phantom dataset needs n >= 1");
  if (!(nodule_fraction >= 0.0 && nodule_fraction <= 1.0))
    throw ValidationError("nodule fraction must lie in [0,1]");
  spec.validate();
  const int n_pos = static_cast<int>(std::lround(n * nodule_fraction));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng({seed, hash_string("phantom_positives")});
  shuffle(order.begin(), order.end(), rng);
  std::vector<char> positive(n, 0);
  for (int i = 0; i < n_pos; ++i) positive[order[i]] = 1;

  std::vector<PhantomSample> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const std::uint64_t s = derive_seed({seed, static_cast<std::uint64_t>(i)});
    auto ph = generate_phantom(spec, s);
    PhantomSample sample{std::move(ph.record), {}};
    sample.clean = sample.record.pixels;
    if (positive[i]) sample.record = implant_random_blob(sample.record, ph.lung_mask, spec, s).record;
    sample.record.image_id = phantom_image_id(i);
    sample.record.patient_id = "pat_" + std::to_string(i / 4);
    out.push_back(std::move(sample));
  }
  return out;
}

/// Writes a dataset in the ingestion layout: images/, masks/, labels.csv,
/// bboxes.csv, plus clean/ holding each image as it was before implanting.
inline void write_dataset(const std::vector<PhantomSample>& samples,
                          const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"images", "masks", "clean"}) {
    fs::create_directories(out_dir / sub, ec);
    if (ec) throw RuntimeFailure("cannot create '" + (out_dir / sub).string() + "': " + ec.message());
  }
  std::ofstream labels(out_dir / "labels.csv");
  std::ofstream boxes(out_dir / "bboxes.csv");
  if (!labels || !boxes) throw RuntimeFailure("cannot write CSV files in '" + out_dir.string() + "'");
  labels << "image_id,patient_id,nodule_label\n";
  boxes << "image_id,x,y,w,h\n";
  for (const auto& s : samples) {
    const auto& r = s.record;
    png::write_gray(out_dir / "images" / (r.image_id + ".png"), r.pixels, 16);
    png::write_mask(out_dir / "masks" / (r.image_id + ".png"), *r.lung_mask);
    png::write_gray(out_dir / "clean" / (r.image_id + ".png"), s.clean, 16);
    labels << r.image_id << ',' << r.patient_id << ',' << r.nodule_label << '\n';
    for (const auto& b : r.bboxes)
      boxes << r.image_id << ',' << b.x << ',' << b.y << ',' << b.w << ',' << b.h << '\n';
  }
  if (!labels || !boxes) throw RuntimeFailure("failed writing CSV files in '" + out_dir.string() + "'");
}

inline std::vector<PhantomSample> generate_phantom_dataset(int n, double nodule_fraction,
                                                           const PhantomSpec& spec,
                                                           std::uint64_t seed,
                                                           const std::filesystem::path& out_dir) {
  auto samples = generate_samples(n, nodule_fraction, spec, seed);
  write_dataset(samples, out_dir);
  return samples;
}

}  // namespace lfa::phantom
