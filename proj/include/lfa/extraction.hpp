#pragma once

#include <algorithm>
#include <concepts>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lfa/artifact.hpp"
#include "lfa/bilateral.hpp"
#include "lfa/dataset.hpp"
#include "lfa/error.hpp"
#include "lfa/grid.hpp"
#include "lfa/inpainting.hpp"
#include "lfa/png_io.hpp"

namespace lfa::extraction {

inline constexpr double kSupportEpsilon = 0.01;
inline constexpr double kGateThreshold = 0.5;

/// Anything that scores a full image as P(nodule).
template <class T>
concept ImageScorer = requires(const T& t, const ImageRecord& r) {
  { t.predict(r) } -> std::convertible_to<double>;
};

/// Scores every image with the same value.
struct ConstantScorer {
  double value = 0.0;
  double predict(const ImageRecord&) const { return value; }
};

struct NoduleAsset {
  std::string asset_id;  // <image_id>_<k>
  Image residual;        // P×P, all values >= 0
  std::string source_image_id;
  Point source_origin;
  double gate_score = 0.0;
  BoundingBox support_bbox;  // patch coordinates
};

inline BoundingBox support_bbox(const Image& residual, double epsilon = kSupportEpsilon) {
  return tight_bbox(residual, [epsilon](float v) { return v > epsilon; });
}

/// Elementwise max(original - inpainted, 0).
inline Image subtract_clamp(const Image& original, const Image& inpainted) {
  if (!original.same_shape(inpainted)) throw ValidationError("subtract_clamp: shape mismatch");
  Image out(original.width(), original.height());
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data()[i] = std::max(0.0f, original.data()[i] - inpainted.data()[i]);
  return out;
}

inline Image subtract_clamp(const Patch& original, const Patch& inpainted) {
  return subtract_clamp(original.pixels, inpainted.pixels);
}

struct ExtractionParams {
  MaskSpec mask_spec{64, 32};
  float fill_value = 0.0f;
  std::optional<BilateralParams> filter = BilateralParams{};  // nullopt disables filtering
  double support_epsilon = kSupportEpsilon;
};

struct Extraction {
  NoduleAsset asset;  // gate_score not yet set
  Patch inpainted;
};

/// get_patch -> mask -> inpaint -> subtract_clamp -> bilateral filter.
template <inpainting::PatchInpainter I>
Extraction extract_nodule(const I& inpainter, const ImageRecord& record, const BoundingBox& bbox,
                          const ExtractionParams& params = {}) {
  const MaskSpec& ms = params.mask_spec;
  if (bbox.empty() || !bbox.fits_in(record.width(), record.height()))
    throw GeometryError("bbox of '" + record.image_id + "' is empty or outside the image");
  if (bbox.w > ms.mask_size() || bbox.h > ms.mask_size())
    throw GeometryError("nodule too large: " + std::to_string(bbox.w) + "x" + std::to_string(bbox.h) +
                        " bbox in '" + record.image_id + "' exceeds the " + std::to_string(ms.mask_size()) +
                        " px mask");
  const Patch original = get_patch(record, bbox, ms.patch_size());
  const auto hole = ms.mask_box();
  const BoundingBox hole_in_image{original.origin.x + hole.x, original.origin.y + hole.y, hole.w, hole.h};
  if (intersect(hole_in_image, bbox) != bbox)
    throw GeometryError("nodule in '" + record.image_id + "' cannot be covered by the mask near the image border");

  const MaskedPatch masked = apply_center_mask(original, ms, params.fill_value);
  Extraction out{{}, inpainting::inpaint(inpainter, masked)};
  Image residual = subtract_clamp(original, out.inpainted);
  if (params.filter) residual = bilateral_filter(residual, *params.filter);
  const BoundingBox support = support_bbox(residual, params.support_epsilon);
  if (support.empty()) throw ValidationError("no residual left for nodule in '" + record.image_id + "'");
  out.asset.residual = std::move(residual);
  out.asset.source_image_id = record.image_id;
  out.asset.source_origin = original.origin;
  out.asset.support_bbox = support;
  return out;
}

struct GateDecision {
  bool accept = false;
  double score = 0.0;
};

inline bool gate_accepts(double score, double threshold = kGateThreshold) { return score < threshold; }

/// Scores the full image with the inpainted patch pasted back in.
template <ImageScorer C>
GateDecision gate_asset(const C& classifier, const ImageRecord& record, const Patch& inpainted,
                        double threshold = kGateThreshold) {
  const double score = classifier.predict(patch2img(record, inpainted));
  return {gate_accepts(score, threshold), score};
}

// ---------------------------------------------------------------------------
// Nodule bank

struct BankSummary {
  int candidates = 0;
  int accepted = 0;
  int rejected_by_gate = 0;
  int rejected_by_geometry = 0;  // includes candidates with no residual
  std::vector<NoduleAsset> assets;
  std::vector<std::string> messages;
};

inline artifact::Json asset_sidecar(const NoduleAsset& a, const std::string& config_hash) {
  artifact::Json j;
  j["asset_id"] = a.asset_id;
  j["source_image_id"] = a.source_image_id;
  j["origin"] = {{"x", a.source_origin.x}, {"y", a.source_origin.y}};
  j["gate_score"] = a.gate_score;
  j["support_bbox"] = {{"x", a.support_bbox.x}, {"y", a.support_bbox.y}, {"w", a.support_bbox.w}, {"h", a.support_bbox.h}};
  j["patch_size"] = a.residual.width();
  j["config_hash"] = config_hash;
  return j;
}

inline void write_asset(const NoduleAsset& a, const std::filesystem::path& dir, const std::string& config_hash) {
  png::write_gray(dir / (a.asset_id + ".png"), a.residual, 16);
  artifact::write_json(dir / (a.asset_id + ".json"), asset_sidecar(a, config_hash));
}

/// Reads every `<asset_id>.json` + `<asset_id>.png` pair, ordered by asset id.
inline std::vector<NoduleAsset> load_bank(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IngestionError("nodule bank '" + dir.string() + "' is not a directory");
  std::vector<fs::path> sidecars;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".json" && fs::exists(fs::path(e.path()).replace_extension(".png")))
      sidecars.push_back(e.path());
  std::sort(sidecars.begin(), sidecars.end());
  std::vector<NoduleAsset> bank;
  for (const auto& p : sidecars) {
    const auto j = artifact::read_json(p);
    NoduleAsset a;
    try {
      a.asset_id = j.at("asset_id").get<std::string>();
      a.source_image_id = j.at("source_image_id").get<std::string>();
      a.source_origin = {j.at("origin").at("x").get<int>(), j.at("origin").at("y").get<int>()};
      a.gate_score = j.at("gate_score").get<double>();
      const auto& b = j.at("support_bbox");
      a.support_bbox = {b.at("x").get<int>(), b.at("y").get<int>(), b.at("w").get<int>(), b.at("h").get<int>()};
    } catch (const nlohmann::json::exception& e) {
      throw IngestionError("bad asset sidecar '" + p.string() + "': " + e.what());
    }
    a.residual = png::read_gray(dir / (a.asset_id + ".png")).pixels;
    if (a.support_bbox.empty() || !a.support_bbox.fits_in(a.residual.width(), a.residual.height()))
      throw IngestionError("asset '" + a.asset_id + "' has an invalid support bbox");
    bank.push_back(std::move(a));
  }
  return bank;
}

struct BankOptions {
  ExtractionParams extraction;
  double threshold = kGateThreshold;
  std::string config_hash;
};

/// Runs extraction + gating over every bbox of every record, in image-id
/// order. Accepted assets are written to `out_dir` when it is non-empty.
template <inpainting::PatchInpainter I, ImageScorer C>
BankSummary build_nodule_bank(const I& inpainter, const C& classifier, std::vector<const ImageRecord*> records,
                              const BankOptions& options, const std::filesystem::path& out_dir = {}) {
  if (!out_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw RuntimeFailure("cannot create '" + out_dir.string() + "': " + ec.message());
  }
  std::sort(records.begin(), records.end(),
            [](const ImageRecord* a, const ImageRecord* b) { return a->image_id < b->image_id; });
  BankSummary s;
  for (const ImageRecord* r : records) {
    for (std::size_t k = 0; k < r->bboxes.size(); ++k) {
      ++s.candidates;
      std::optional<Extraction> ex;
      try {
        ex = extract_nodule(inpainter, *r, r->bboxes[k], options.extraction);
      } catch (const ValidationError& e) {
        ++s.rejected_by_geometry;
        s.messages.push_back(e.what());
        continue;
      }
      const GateDecision gate = gate_asset(classifier, *r, ex->inpainted, options.threshold);
      ex->asset.gate_score = gate.score;
      ex->asset.asset_id = r->image_id + "_" + std::to_string(k);
      if (!gate.accept) {
        ++s.rejected_by_gate;
        continue;
      }
      ++s.accepted;
      if (!out_dir.empty()) write_asset(ex->asset, out_dir, options.config_hash);
      s.assets.push_back(std::move(ex->asset));
    }
  }
  if (!out_dir.empty()) {
    artifact::Json j;
    j["candidates"] = s.candidates;
    j["accepted"] = s.accepted;
    j["rejected_by_gate"] = s.rejected_by_gate;
    j["rejected_by_geometry"] = s.rejected_by_geometry;
    j["threshold"] = options.threshold;
    j["messages"] = s.messages;
    artifact::write_json(out_dir / "bank_summary.json", j);
  }
  return s;
}

template <inpainting::PatchInpainter I, ImageScorer C>
BankSummary build_nodule_bank(const I& inpainter, const C& classifier, const std::vector<ImageRecord>& records,
                              const BankOptions& options, const std::filesystem::path& out_dir = {}) {
  std::vector<const ImageRecord*> ptrs;
  for (const auto& r : records)
    if (!r.bboxes.empty()) ptrs.push_back(&r);
  return build_nodule_bank(inpainter, classifier, std::move(ptrs), options, out_dir);
}

}  // namespace lfa::extraction
