#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "lfa/artifact.hpp"
#include "lfa/dataset.hpp"
#include "lfa/error.hpp"
#include "lfa/extraction.hpp"
#include "lfa/grid.hpp"
#include "lfa/rng.hpp"

namespace lfa::augmentation {

using extraction::NoduleAsset;

struct AugmentationConfig {
  double k = 0.05;
  bool flip_h = true;
  bool flip_v = true;
  int max_location_attempts = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(k >= 0.0 && k <= 1.0)) throw ValidationError("insertion probability k must lie in [0,1]");
    if (max_location_attempts < 1) throw ValidationError("max_location_attempts must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Geometric helpers

inline Image flip_horizontal(const Image& in) {
  Image out(in.width(), in.height());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) out(x, y) = in(in.width() - 1 - x, y);
  return out;
}

inline Image flip_vertical(const Image& in) {
  Image out(in.width(), in.height());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) out(x, y) = in(x, in.height() - 1 - y);
  return out;
}

enum class Border { zero, replicate };

/// Counter-clockwise rotation about the grid center (in image orientation,
/// y pointing down). Quarter turns of square grids are exact permutations;
/// other angles are bilinear.
inline Image rotate(const Image& in, double degrees, Border border = Border::zero) {
  const int w = in.width(), h = in.height();
  double turns = std::fmod(degrees, 360.0);
  if (turns < 0) turns += 360.0;
  if (w == h && std::fmod(turns, 90.0) == 0.0) {
    const int q = static_cast<int>(turns / 90.0);
    Image out(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int sx = x, sy = y;
        switch (q) {
          case 1: sx = w - 1 - y; sy = x; break;
          case 2: sx = w - 1 - x; sy = h - 1 - y; break;
          case 3: sx = y; sy = h - 1 - x; break;
          default: break;
        }
        out(x, y) = in(sx, sy);
      }
    return out;
  }
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a), s = std::sin(a);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  auto sample = [&](int x, int y) -> double {
    if (border == Border::replicate) return in(std::clamp(x, 0, w - 1), std::clamp(y, 0, h - 1));
    return in.contains(x, y) ? in(x, y) : 0.0;
  };
  Image out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Inverse map: rotate the destination coordinate clockwise.
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + c * dx - s * dy;
      const double sy = cy + s * dx + c * dy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      const double v = (1 - fx) * (1 - fy) * sample(x0, y0) + fx * (1 - fy) * sample(x0 + 1, y0) +
                       (1 - fx) * fy * sample(x0, y0 + 1) + fx * fy * sample(x0 + 1, y0 + 1);
      out(x, y) = static_cast<float>(v);
    }
  return out;
}

/// Rotates, then flips; the residual is re-clamped to >= 0 and its support
/// recomputed.
inline NoduleAsset transform_asset(const NoduleAsset& asset, int rotation_deg, bool flip_h, bool flip_v,
                                   double support_epsilon = extraction::kSupportEpsilon) {
  if (rotation_deg < 0 || rotation_deg >= 360)
    throw ValidationError("asset rotation must be an integer in [0,360), got " + std::to_string(rotation_deg));
  NoduleAsset out = asset;
  if (rotation_deg != 0) out.residual = rotate(out.residual, rotation_deg);
  if (flip_h) out.residual = flip_horizontal(out.residual);
  if (flip_v) out.residual = flip_vertical(out.residual);
  for (auto& v : out.residual.values()) v = std::max(v, 0.0f);
  out.support_bbox = extraction::support_bbox(out.residual, support_epsilon);
  return out;
}

/// Up to `attempts` origins drawn uniformly over the image; returns the first
/// whose w×h footprint lies entirely on lung pixels.
inline std::optional<Point> sample_location(const Mask& lung_mask, int w, int h, Rng& rng, int attempts = 100) {
  if (w < 1 || h < 1 || w > lung_mask.width() || h > lung_mask.height()) return std::nullopt;
  for (int a = 0; a < attempts; ++a) {
    const int ox = static_cast<int>(uniform_int(rng, 0, lung_mask.width() - w));
    const int oy = static_cast<int>(uniform_int(rng, 0, lung_mask.height() - h));
    bool inside = true;
    for (int y = oy; y < oy + h && inside; ++y)
      for (int x = ox; x < ox + w; ++x)
        if (!lung_mask(x, y)) {
          inside = false;
          break;
        }
    if (inside) return Point{ox, oy};
  }
  return std::nullopt;
}

/// Adds the support region of the residual with its top-left at `origin`,
/// clipping at 1. The record becomes a positive with the footprint as bbox.
inline ImageRecord insert_asset(const ImageRecord& record, const NoduleAsset& asset, Point origin) {
  const BoundingBox s = asset.support_bbox;
  const BoundingBox footprint{origin.x, origin.y, s.w, s.h};
  if (!footprint.fits_in(record.width(), record.height()))
    throw GeometryError("insertion footprint of '" + asset.asset_id + "' at (" + std::to_string(origin.x) + "," +
                        std::to_string(origin.y) + ") leaves image '" + record.image_id + "'");
  ImageRecord out = record;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      float& p = out.pixels(origin.x + x, origin.y + y);
      p = std::min(1.0f, p + asset.residual(s.x + x, s.y + y));
    }
  out.nodule_label = 1;
  out.bboxes.push_back(footprint);
  out.provenance.push_back("inserted:" + asset.asset_id + "@" + std::to_string(origin.x) + "," +
                           std::to_string(origin.y));
  return out;
}

// ---------------------------------------------------------------------------
// Epoch planning

enum class Decision { none, insert, no_location };

inline const char* to_string(Decision d) {
  switch (d) {
    case Decision::none: return "none";
    case Decision::insert: return "insert";
    case Decision::no_location: return "no_location";
  }
  return "?";
}

struct PlanEntry {
  std::string image_id;
  Decision decision = Decision::none;
  int asset_index = -1;
  std::string asset_id;
  int rotation = 0;
  bool flip_h = false;
  bool flip_v = false;
  Point origin;
};

struct EpochPlan {
  int epoch = 0;
  std::vector<PlanEntry> entries;  // one per eligible image, in input order

  /// Images selected for insertion (including those with no admissible location).
  int planned() const {
    int n = 0;
    for (const auto& e : entries) n += e.decision != Decision::none;
    return n;
  }
  int inserted() const {
    int n = 0;
    for (const auto& e : entries) n += e.decision == Decision::insert;
    return n;
  }
};

inline bool eligible(const ImageRecord& r) { return r.nodule_label == 0 && r.lung_mask.has_value(); }

/// Pure function of (records, bank, config.seed, epoch). Every eligible image
/// draws from its own stream hash(seed, epoch, image_id).
inline EpochPlan plan_epoch(const std::vector<ImageRecord>& records, const std::vector<NoduleAsset>& bank,
                            const AugmentationConfig& config, int epoch) {
  config.validate();
  if (config.k > 0.0 && bank.empty()) throw ValidationError("local augmentation needs a non-empty nodule bank");
  EpochPlan plan{epoch, {}};
  for (const auto& r : records) {
    if (!eligible(r)) continue;
    PlanEntry e;
    e.image_id = r.image_id;
    Rng rng = make_rng({config.seed, static_cast<std::uint64_t>(epoch), hash_string(r.image_id)});
    if (config.k > 0.0 && uniform01(rng) < config.k) {
      e.asset_index = static_cast<int>(uniform_int(rng, 0, static_cast<long long>(bank.size()) - 1));
      e.asset_id = bank[e.asset_index].asset_id;
      e.rotation = static_cast<int>(uniform_int(rng, 0, 359));
      e.flip_h = config.flip_h && coin(rng);
      e.flip_v = config.flip_v && coin(rng);
      const auto t = transform_asset(bank[e.asset_index], e.rotation, e.flip_h, e.flip_v);
      const auto loc = t.support_bbox.empty()
                           ? std::nullopt
                           : sample_location(*r.lung_mask, t.support_bbox.w, t.support_bbox.h, rng,
                                             config.max_location_attempts);
      if (loc) {
        e.decision = Decision::insert;
        e.origin = *loc;
      } else {
        e.decision = Decision::no_location;
      }
    }
    plan.entries.push_back(std::move(e));
  }
  return plan;
}

/// The training stream of one epoch: records with planned insertions applied.
inline std::vector<ImageRecord> apply_plan(const std::vector<ImageRecord>& records,
                                           const std::vector<NoduleAsset>& bank, const EpochPlan& plan) {
  std::map<std::string, const PlanEntry*> by_id;
  for (const auto& e : plan.entries)
    if (e.decision == Decision::insert) by_id[e.image_id] = &e;
  std::vector<ImageRecord> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    auto it = by_id.find(r.image_id);
    if (it == by_id.end()) {
      out.push_back(r);
      continue;
    }
    const PlanEntry& e = *it->second;
    out.push_back(insert_asset(r, transform_asset(bank.at(e.asset_index), e.rotation, e.flip_h, e.flip_v), e.origin));
  }
  return out;
}

/// One JSON object per line, one line per eligible image.
inline std::string dump_plan(const EpochPlan& plan) {
  std::ostringstream os;
  for (const auto& e : plan.entries) {
    artifact::Json j;
    j["epoch"] = plan.epoch;
    j["image_id"] = e.image_id;
    j["decision"] = to_string(e.decision);
    if (e.decision != Decision::none) {
      j["asset_id"] = e.asset_id;
      j["rotation"] = e.rotation;
      j["flip_h"] = e.flip_h;
      j["flip_v"] = e.flip_v;
    }
    if (e.decision == Decision::insert) j["origin"] = {{"x", e.origin.x}, {"y", e.origin.y}};
    os << j.dump() << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Global baseline augmentation

inline constexpr double kStandardMaxRotation = 15.0;

/// Whole-image flip and rotation with explicit parameters; borders replicate.
inline ImageRecord standard_augment(const ImageRecord& record, bool flip, double rotation_deg) {
  ImageRecord out = record;
  if (flip) out.pixels = flip_horizontal(out.pixels);
  if (rotation_deg != 0.0) out.pixels = rotate(out.pixels, rotation_deg, Border::replicate);
  return out;
}

struct StandardDraw {
  bool flip = false;
  double rotation = 0.0;
};

/// Horizontal flip with probability 0.5, rotation uniform in [-15, 15] degrees.
inline StandardDraw draw_standard(Rng& rng) {
  StandardDraw d;
  d.flip = coin(rng);
  d.rotation = uniform_real(rng, -kStandardMaxRotation, kStandardMaxRotation);
  return d;
}

inline ImageRecord standard_augment(const ImageRecord& record, Rng& rng) {
  const auto d = draw_standard(rng);
  return standard_augment(record, d.flip, d.rotation);
}

}  // namespace lfa::augmentation
