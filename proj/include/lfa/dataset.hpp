#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lfa/csv.hpp"
#include "lfa/error.hpp"
#include "lfa/grid.hpp"
#include "lfa/png_io.hpp"
#include "lfa/rng.hpp"

namespace lfa {

/// One grayscale scan. Pixels are stored as [0,1] floats regardless of the
/// source bit depth; `source_bit_depth` is kept for export.
struct ImageRecord {
  std::string image_id;
  std::string patient_id;
  Image pixels;
  int nodule_label = 0;
  std::vector<BoundingBox> bboxes;
  std::optional<Mask> lung_mask;
  int source_bit_depth = 16;
  std::vector<std::string> provenance;

  int width() const { return pixels.width(); }
  int height() const { return pixels.height(); }
};

/// Throws ValidationError naming the first violated record invariant.
inline void validate(const ImageRecord& r, int working_size = 0) {
  const auto fail = [&](const std::string& why) {
    throw ValidationError("record '" + r.image_id + "': " + why);
  };
  if (r.pixels.empty()) fail("no pixels");
  if (working_size > 0 && (r.width() != working_size || r.height() != working_size))
    fail("size " + std::to_string(r.width()) + "x" + std::to_string(r.height()) +
         " differs from working size " + std::to_string(working_size));
  for (float v : r.pixels.values())
    if (!(v >= 0.0f && v <= 1.0f)) fail("pixel value outside [0,1]");
  if (r.nodule_label != 0 && r.nodule_label != 1) fail("label must be 0 or 1");
  if (!r.bboxes.empty() && r.nodule_label != 1) fail("boxed record must carry nodule_label=1");
  for (const auto& b : r.bboxes)
    if (!b.fits_in(r.width(), r.height())) fail("bounding box outside image");
  if (r.lung_mask) {
    if (!r.lung_mask->same_shape(r.pixels)) fail("lung mask shape differs from image");
    for (auto v : r.lung_mask->values())
      if (v > 1) fail("lung mask must be binary");
  }
}

/// Square patch of a source image together with where it came from.
struct Patch {
  Image pixels;
  Point origin;
  std::string source_id;

  int size() const { return pixels.width(); }
};

/// Centered square hole of half the patch size.
class MaskSpec {
 public:
  MaskSpec() : MaskSpec(64, 32) {}
  MaskSpec(int patch_size, int mask_size) : patch_size_(patch_size), mask_size_(mask_size) {
    if (patch_size <= 0 || patch_size % 2 != 0)
      throw ValidationError("patch size must be positive and even, got " + std::to_string(patch_size));
    if (mask_size * 2 != patch_size)
      throw ValidationError("mask size must be exactly half the patch size (" +
                            std::to_string(patch_size / 2) + "), got " + std::to_string(mask_size));
  }
  static MaskSpec for_patch(int patch_size) { return {patch_size, patch_size / 2}; }

  int patch_size() const { return patch_size_; }
  int mask_size() const { return mask_size_; }
  int mask_offset() const { return (patch_size_ - mask_size_) / 2; }
  BoundingBox mask_box() const { return {mask_offset(), mask_offset(), mask_size_, mask_size_}; }

  bool in_mask(int x, int y) const {
    const int o = mask_offset();
    return x >= o && y >= o && x < o + mask_size_ && y < o + mask_size_;
  }

  friend bool operator==(const MaskSpec&, const MaskSpec&) = default;

 private:
  int patch_size_;
  int mask_size_;
};

/// Patch whose central mask region has been overwritten with `fill_value`.
struct MaskedPatch {
  Patch patch;
  MaskSpec spec;
  float fill_value = 0.0f;
};

struct SplitFractions {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  SplitFractions fractions;
};

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear resample sampling at pixel centers.
inline Image resize_bilinear(const Image& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  Image out(width, height);
  const double sx = static_cast<double>(src.width()) / width;
  const double sy = static_cast<double>(src.height()) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height() - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width() - 1);
      const double tx = fx - x0;
      const double top = src(x0, y0) * (1 - tx) + src(x1, y0) * tx;
      const double bot = src(x0, y1) * (1 - tx) + src(x1, y1) * tx;
      out(x, y) = clamp01(static_cast<float>(top * (1 - ty) + bot * ty));
    }
  }
  return out;
}

inline Mask resize_nearest(const Mask& src, int width, int height) {
  if (src.width() == width && src.height() == height) return src;
  Mask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(src.height() - 1, static_cast<int>((y + 0.5) * src.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(src.width() - 1, static_cast<int>((x + 0.5) * src.width() / width));
      out(x, y) = src(sx, sy);
    }
  }
  return out;
}

/// Proportional box rescale; floor on the leading edge and ceil on the
/// trailing edge so the rescaled box still covers the original content.
inline BoundingBox rescale_bbox(const BoundingBox& b, int src_w, int src_h, int dst_w, int dst_h) {
  const double sx = static_cast<double>(dst_w) / src_w;
  const double sy = static_cast<double>(dst_h) / src_h;
  const int x0 = static_cast<int>(std::floor(b.x * sx + 1e-9));
  const int y0 = static_cast<int>(std::floor(b.y * sy + 1e-9));
  const int x1 = static_cast<int>(std::ceil(b.right() * sx - 1e-9));
  const int y1 = static_cast<int>(std::ceil(b.bottom() * sy - 1e-9));
  return {x0, y0, std::max(1, x1 - x0), std::max(1, y1 - y0)};
}

// ---------------------------------------------------------------------------
// Ingestion

struct LoadOptions {
  /// Square working size every image is resized to; 0 keeps the native size.
  int working_size = 0;
};

namespace detail {

inline std::filesystem::path resolve_image(const std::filesystem::path& dir, const std::string& id) {
  const auto direct = dir / id;
  if (std::filesystem::is_regular_file(direct)) return direct;
  return dir / (id + ".png");
}

}  // namespace detail

/// Loads a labelled dataset.
///
/// `labels_file` is `image_id,patient_id,nodule_label`; the optional
/// `bbox_file` is `image_id,x,y,w,h` in source pixels. Images are looked up as
/// `<image_dir>/<image_id>` or `<image_dir>/<image_id>.png`; masks use the same
/// name under `mask_dir`. Records are returned sorted by image_id.
inline std::vector<ImageRecord> load_dataset(const std::filesystem::path& image_dir,
                                             const std::filesystem::path& labels_file,
                                             const std::optional<std::filesystem::path>& bbox_file,
                                             const std::optional<std::filesystem::path>& mask_dir,
                                             const LoadOptions& options = {}) {
  const auto labels = csv::read(labels_file, {"image_id", "patient_id", "nodule_label"});
  const int c_id = labels.column("image_id");
  const int c_pat = labels.column("patient_id");
  const int c_lab = labels.column("nodule_label");

  std::map<std::string, ImageRecord> by_id;
  std::vector<std::string> missing;
  for (const auto& row : labels.rows) {
    ImageRecord r;
    r.image_id = row[c_id];
    r.patient_id = row[c_pat];
    r.nodule_label = csv::to_int(row[c_lab], "nodule_label");
    if (r.image_id.empty()) throw ValidationError(labels_file.string() + ": empty image_id");
    if (r.patient_id.empty())
      throw ValidationError("record '" + r.image_id + "' has no patient_id");
    if (r.nodule_label != 0 && r.nodule_label != 1)
      throw ValidationError("record '" + r.image_id + "': nodule_label must be 0 or 1");
    if (by_id.count(r.image_id))
      throw ValidationError(labels_file.string() + ": duplicate image_id '" + r.image_id + "'");
    if (!std::filesystem::is_regular_file(detail::resolve_image(image_dir, r.image_id)))
      missing.push_back(r.image_id);
    by_id.emplace(r.image_id, std::move(r));
  }
  if (!missing.empty()) {
    std::string msg = "image file(s) not found in '" + image_dir.string() + "' for id(s):";
    for (const auto& id : missing) msg += " " + id;
    throw IngestionError(msg);
  }

  std::map<std::string, std::vector<BoundingBox>> boxes;
  if (bbox_file) {
    const auto t = csv::read(*bbox_file, {"image_id", "x", "y", "w", "h"});
    std::vector<std::string> unknown;
    for (const auto& row : t.rows) {
      const auto& id = row[t.column("image_id")];
      if (!by_id.count(id)) {
        unknown.push_back(id);
        continue;
      }
      boxes[id].push_back({csv::to_int(row[t.column("x")], "x"), csv::to_int(row[t.column("y")], "y"),
                           csv::to_int(row[t.column("w")], "w"), csv::to_int(row[t.column("h")], "h")});
    }
    if (!unknown.empty()) {
      std::string msg = bbox_file->string() + ": bounding boxes reference unlisted id(s):";
      for (const auto& id : unknown) msg += " " + id;
      throw ValidationError(msg);
    }
  }

  std::vector<ImageRecord> out;
  out.reserve(by_id.size());
  for (auto& [id, r] : by_id) {
    auto g = png::read_gray(detail::resolve_image(image_dir, id));
    const int src_w = g.pixels.width();
    const int src_h = g.pixels.height();
    const int dst_w = options.working_size > 0 ? options.working_size : src_w;
    const int dst_h = options.working_size > 0 ? options.working_size : src_h;
    r.pixels = resize_bilinear(g.pixels, dst_w, dst_h);
    r.source_bit_depth = g.bit_depth;

    if (auto it = boxes.find(id); it != boxes.end()) {
      for (const auto& b : it->second) {
        if (!b.fits_in(src_w, src_h))
          throw ValidationError("record '" + id + "': bounding box outside the source image");
        const auto scaled = rescale_bbox(b, src_w, src_h, dst_w, dst_h);
        if (!scaled.fits_in(dst_w, dst_h))
          throw ValidationError("record '" + id + "': bounding box outside image after rescale");
        r.bboxes.push_back(scaled);
      }
      r.nodule_label = 1;
    }
    if (mask_dir) {
      const auto mpath = detail::resolve_image(*mask_dir, id);
      if (!std::filesystem::is_regular_file(mpath))
        throw IngestionError("lung mask not found for id " + id + " in '" + mask_dir->string() + "'");
      const auto m = png::read_mask(mpath);
      if (m.width() != src_w || m.height() != src_h)
        throw ValidationError("record '" + id + "': lung mask shape differs from image");
      r.lung_mask = resize_nearest(m, dst_w, dst_h);
    }
    validate(r, options.working_size);
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

/// Patient-wise split. Patients owning a `pinned_train` image are forced into
/// the training split; the rest are shuffled by `seed` and assigned by largest
/// remainder so each split is within one patient of its requested share.
inline DatasetSplit split_by_patient(const std::vector<ImageRecord>& records,
                                     const SplitFractions& fractions, std::uint64_t seed,
                                     const std::set<std::string>& pinned_train = {}) {
  const double fr[3] = {fractions.train, fractions.val, fractions.test};
  for (double f : fr)
    if (f < 0.0) throw ValidationError("split fractions must be non-negative");
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9)
    throw ValidationError("split fractions must sum to 1");

  std::map<std::string, std::vector<std::string>> images_of;
  std::set<std::string> pinned_patients;
  for (const auto& r : records) {
    if (r.patient_id.empty()) throw ValidationError("record '" + r.image_id + "' has no patient_id");
    images_of[r.patient_id].push_back(r.image_id);
    if (pinned_train.count(r.image_id)) pinned_patients.insert(r.patient_id);
  }
  const int n_patients = static_cast<int>(images_of.size());
  const int n_splits = static_cast<int>((fr[0] > 0) + (fr[1] > 0) + (fr[2] > 0));
  if (n_patients < n_splits)
    throw ValidationError("cannot split " + std::to_string(n_patients) + " patient(s) into " +
                          std::to_string(n_splits) + " non-empty splits");

  // Largest-remainder apportionment of patients, with at least one patient per
  // non-zero split.
  int counts[3];
  double rema[3];
  int assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fr[i] * n_patients;
    counts[i] = static_cast<int>(std::floor(exact));
    rema[i] = exact - counts[i];
    assigned += counts[i];
  }
  while (assigned < n_patients) {
    int best = 0;
    for (int i = 1; i < 3; ++i)
      if (rema[i] > rema[best]) best = i;
    ++counts[best];
    rema[best] = -1.0;
    ++assigned;
  }
  for (int i = 0; i < 3; ++i) {
    if (fr[i] > 0 && counts[i] == 0) {
      int donor = static_cast<int>(std::max_element(counts, counts + 3) - counts);
      --counts[donor];
      ++counts[i];
    }
  }

  std::vector<std::string> free_patients;
  for (const auto& [pid, _] : images_of)
    if (!pinned_patients.count(pid)) free_patients.push_back(pid);
  Rng rng = make_rng({seed, hash_string("split_by_patient")});
  shuffle(free_patients.begin(), free_patients.end(), rng);

  std::vector<std::string> order(pinned_patients.begin(), pinned_patients.end());
  order.insert(order.end(), free_patients.begin(), free_patients.end());
  const int n_train = std::max(counts[0], static_cast<int>(pinned_patients.size()));
  int n_val = counts[1];
  if (n_train + n_val > n_patients) n_val = n_patients - n_train;

  DatasetSplit split;
  split.fractions = fractions;
  for (int i = 0; i < n_patients; ++i) {
    auto& dst = i < n_train ? split.train : (i < n_train + n_val ? split.val : split.test);
    const auto& imgs = images_of[order[i]];
    dst.insert(dst.end(), imgs.begin(), imgs.end());
  }
  for (auto* v : {&split.train, &split.val, &split.test}) std::sort(v->begin(), v->end());
  return split;
}

/// Records whose image_id is in `ids`, in the order of `ids`.
inline std::vector<ImageRecord> select(const std::vector<ImageRecord>& records,
                                       const std::vector<std::string>& ids) {
  std::map<std::string, const ImageRecord*> index;
  for (const auto& r : records) index[r.image_id] = &r;
  std::vector<ImageRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw ValidationError("unknown image_id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

struct SplitRecords {
  std::vector<ImageRecord> train;
  std::vector<ImageRecord> val;
  std::vector<ImageRecord> test;
};

inline SplitRecords materialize(const std::vector<ImageRecord>& records, const DatasetSplit& split) {
  return {select(records, split.train), select(records, split.val), select(records, split.test)};
}

// ---------------------------------------------------------------------------
// Patch geometry

/// Origin of a size-`patch_size` patch centered on `center`, clamped so the
/// patch lies inside the image.
inline Point clamped_patch_origin(const ImageRecord& record, Point center, int patch_size) {
  if (patch_size > record.width() || patch_size > record.height())
    throw GeometryError("patch size " + std::to_string(patch_size) + " exceeds image '" +
                        record.image_id + "' (" + std::to_string(record.width()) + "x" +
                        std::to_string(record.height()) + ")");
  return {std::clamp(center.x - patch_size / 2, 0, record.width() - patch_size),
          std::clamp(center.y - patch_size / 2, 0, record.height() - patch_size)};
}

inline Point bbox_center(const BoundingBox& b) { return {b.x + b.w / 2, b.y + b.h / 2}; }

inline Patch get_patch_at(const ImageRecord& record, Point origin, int patch_size) {
  return {record.pixels.crop(origin.x, origin.y, patch_size, patch_size), origin, record.image_id};
}

inline Patch get_patch(const ImageRecord& record, Point center, int patch_size) {
  return get_patch_at(record, clamped_patch_origin(record, center, patch_size), patch_size);
}

inline Patch get_patch(const ImageRecord& record, const BoundingBox& bbox, int patch_size) {
  return get_patch(record, bbox_center(bbox), patch_size);
}

inline MaskedPatch apply_center_mask(const Patch& patch, const MaskSpec& spec, float fill_value = 0.0f) {
  if (patch.pixels.width() != spec.patch_size() || patch.pixels.height() != spec.patch_size())
    throw GeometryError("patch is " + std::to_string(patch.pixels.width()) + "x" +
                        std::to_string(patch.pixels.height()) + " but mask spec expects " +
                        std::to_string(spec.patch_size()));
  MaskedPatch out{patch, spec, fill_value};
  const auto box = spec.mask_box();
  for (int y = box.y; y < box.bottom(); ++y)
    for (int x = box.x; x < box.right(); ++x) out.patch.pixels(x, y) = fill_value;
  return out;
}

/// Copy of `record` with `patch` written at `origin`.
inline ImageRecord patch2img(const ImageRecord& record, const Image& patch, Point origin) {
  ImageRecord out = record;
  out.pixels.paste(patch, origin.x, origin.y);
  return out;
}

inline ImageRecord patch2img(const ImageRecord& record, const Patch& patch) {
  return patch2img(record, patch.pixels, patch.origin);
}

/// `n` patches at uniformly random valid positions of uniformly chosen
/// records. With `exclude_nodule_images`, only nodule_label=0 sources are used.
inline std::vector<Patch> sample_random_patches(const std::vector<ImageRecord>& records, int n,
                                                int patch_size, std::uint64_t seed,
                                                bool exclude_nodule_images) {
  std::vector<const ImageRecord*> eligible;
  for (const auto& r : records)
    if (!exclude_nodule_images || r.nodule_label == 0) eligible.push_back(&r);
  if (eligible.empty()) throw ValidationError("no eligible source images for patch sampling");
  for (const auto* r : eligible)
    if (r->width() < patch_size || r->height() < patch_size)
      throw GeometryError("patch size exceeds image '" + r->image_id + "'");

  Rng rng = make_rng({seed, hash_string("sample_random_patches")});
  std::vector<Patch> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto* r = eligible[uniform_int(rng, 0, static_cast<long long>(eligible.size()) - 1)];
    const Point o{static_cast<int>(uniform_int(rng, 0, r->width() - patch_size)),
                  static_cast<int>(uniform_int(rng, 0, r->height() - patch_size))};
    out.push_back(get_patch_at(*r, o, patch_size));
  }
  return out;
}

}  // namespace lfa
