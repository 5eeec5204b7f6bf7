#pragma once

// Versioned model directories: `metadata.json` (kind, geometry, training log)
// next to `params.bin` (see nn::save_parameters for the blob layout).

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>

#include "json.hpp"
#include "lfa/error.hpp"

namespace lfa::artifact {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kMetadataFile = "metadata.json";
inline constexpr const char* kParamsFile = "params.bin";

/// JSON has no infinities; they are written as the strings "inf"/"-inf"/"nan".
inline Json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double to_double(const Json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    throw ValidationError("expected a number, got '" + s + "'");
  }
  return j.get<double>();
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw RuntimeFailure("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
  if (!out) throw RuntimeFailure("failed writing '" + path.string() + "'");
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError("malformed JSON in '" + path.string() + "': " + e.what());
  }
}

inline void write_metadata(const std::filesystem::path& dir, const std::string& kind, Json body) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create '" + dir.string() + "': " + ec.message());
  Json meta;
  meta["format"] = "lfa-model";
  meta["format_version"] = kFormatVersion;
  meta["kind"] = kind;
  for (auto& [k, v] : body.items()) meta[k] = v;
  write_json(dir / kMetadataFile, meta);
}

inline Json read_metadata(const std::filesystem::path& dir, const std::string& expected_kind) {
  const Json meta = read_json(dir / kMetadataFile);
  if (meta.value("format", "") != "lfa-model")
    throw IngestionError("'" + dir.string() + "' is not a model directory");
  if (meta.value("format_version", 0) != kFormatVersion)
    throw IngestionError("'" + dir.string() + "': unsupported model format version");
  if (meta.value("kind", "") != expected_kind)
    throw ValidationError("'" + dir.string() + "' holds a '" + meta.value("kind", "") +
                          "' model, expected '" + expected_kind + "'");
  return meta;
}

}  // namespace lfa::artifact
