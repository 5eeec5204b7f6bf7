#pragma once

// Flat run configuration: every key has a typed default; presets adjust the
// defaults, a JSON file overrides them, `--key value` flags override the file.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lfa/artifact.hpp"
#include "lfa/error.hpp"

namespace lfa::cli {

using Json = nlohmann::ordered_json;

struct KeySpec {
  std::string name;
  Json value;  // default; its JSON type is the key's type
  std::string help;
};

inline const std::vector<KeySpec>& key_specs() {
  static const std::vector<KeySpec> keys = {
      {"preset", "desk", "scale preset: desk or full"},
      {"seed", 0, "global seed"},
      {"out", "", "output directory"},
      {"data_dir", "", "dataset directory (images/, labels.csv, bboxes.csv, masks/)"},
      {"patches_dir", "", "patch directory written by prepare-patches"},
      {"inpainter", "", "inpainter model directory"},
      {"classifier", "", "classifier model directory"},
      {"bank", "", "nodule bank directory"},
      {"working_size", 0, "resize images to this square size on load (0 keeps native size)"},
      {"n_images", 2000, "phantom images"},
      {"nodule_fraction", 0.15, "phantom fraction of nodule images"},
      {"image_size", 128, "phantom image size"},
      {"min_amplitude", 0.1, "phantom nodule peak amplitude, lower bound"},
      {"max_amplitude", 0.4, "phantom nodule peak amplitude, upper bound"},
      {"min_radius", 3.0, "phantom nodule radius, lower bound"},
      {"max_radius", 8.0, "phantom nodule radius, upper bound"},
      {"noise_sigma", 0.01, "phantom pixel noise"},
      {"train_fraction", 0.7, "patient share of the training split"},
      {"val_fraction", 0.1, "patient share of the validation split"},
      {"test_fraction", 0.2, "patient share of the test split"},
      {"split_seed", 0, "seed of the patient-wise split"},
      {"pin_boxed", false, "force patients with boxed nodules into the training split"},
      {"patch_size", 64, "inpainting patch size P"},
      {"mask_size", 32, "inpainting mask size M = P/2"},
      {"n_train_patches", 2000, "training patches"},
      {"n_val_patches", 200, "validation patches"},
      {"n_test_patches", 800, "test patches"},
      {"gamma", 0.97, "discount factor of the reconstruction loss"},
      {"channel_divisor", 16, "divides every inpainter channel width"},
      {"rec_loss_weight", 0.999, "reconstruction loss weight"},
      {"adv_loss_weight", 0.001, "adversarial loss weight"},
      {"norm", "l1", "reconstruction norm: l1 or l2"},
      {"fill_value", 0.0, "value written into the masked hole"},
      {"inpainter_epochs", 20, "inpainter training epochs"},
      {"inpainter_batch_size", 64, "inpainter batch size"},
      {"inpainter_lr", 1e-3, "generator learning rate"},
      {"discriminator_lr", 2e-4, "discriminator learning rate"},
      {"oracle", "", "eval-inpainter without a model: perfect or mean-fill"},
      {"bilateral", true, "apply the bilateral filter to residuals"},
      {"bilateral_window", 3, "bilateral window size"},
      {"sigma_space", 1.0, "bilateral spatial sigma (pixels)"},
      {"sigma_intensity", 0.1, "bilateral intensity sigma"},
      {"support_epsilon", 0.01, "residual threshold of the support bbox"},
      {"gate_threshold", 0.5, "accept assets scoring strictly below this"},
      {"regime", "baseline", "classifier regime: baseline, standard or local"},
      {"classifier_epochs", 20, "classifier training epochs"},
      {"classifier_batch_size", 8, "classifier batch size"},
      {"classifier_lr", 3e-3, "classifier learning rate"},
      {"lr_decay", 0.95, "per-epoch learning rate factor"},
      {"base_width", 8, "classifier first-layer width"},
      {"max_width", 32, "classifier width cap"},
      {"k", 0.05, "nodule insertion probability per eligible image and epoch"},
      {"flip_h", true, "random horizontal flips of inserted nodules"},
      {"flip_v", true, "random vertical flips of inserted nodules"},
      {"max_location_attempts", 100, "insertion location attempts"},
      {"dump_plans", false, "write every epoch plan to <out>/plans/"},
      {"image_id", "", "attention-map image (default: first nodule image of the test split)"},
      {"stride", 0, "attention-map stride (0 selects M/2)"},
      {"fractions", "1.0,0.7,0.5,0.2,0.1,0.05", "learning-curve training fractions"},
      {"repeats", 3, "learning-curve repeats per cell"},
      {"regimes", "baseline,standard,local", "learning-curve regimes"},
      {"subsample_seed", 0, "seed of the learning-curve subsamples"},
  };
  return keys;
}

inline Json preset_overrides(const std::string& preset) {
  if (preset == "desk") return Json::object();
  if (preset == "full")
    return {{"image_size", 512},       {"working_size", 512},        {"channel_divisor", 1},
            {"n_train_patches", 1000000}, {"n_val_patches", 10000}, {"base_width", 32},
            {"max_width", 512},        {"classifier_epochs", 30},   {"classifier_batch_size", 16}};
  throw ValidationError("unknown preset '" + preset + "' (expected desk or full)");
}

inline const KeySpec* find_key(const std::string& name) {
  for (const auto& k : key_specs())
    if (k.name == name) return &k;
  return nullptr;
}

/// Converts `raw` to the type of `spec`'s default; returns an error message
/// on failure.
inline std::optional<std::string> coerce(const KeySpec& spec, const Json& raw, Json& out) {
  const Json& d = spec.value;
  try {
    if (raw.is_string() && !d.is_string()) {
      const std::string s = raw.get<std::string>();
      if (d.is_boolean()) {
        if (s == "true" || s == "1") out = true;
        else if (s == "false" || s == "0") out = false;
        else return "'" + spec.name + "' expects true or false, got '" + s + "'";
        return std::nullopt;
      }
      std::size_t used = 0;
      if (d.is_number_integer()) {
        const long long v = std::stoll(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        out = v;
      } else {
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        out = v;
      }
      return std::nullopt;
    }
    if (d.is_string() && !raw.is_string()) return "'" + spec.name + "' expects a string";
    if (d.is_boolean() && !raw.is_boolean()) return "'" + spec.name + "' expects a boolean";
    if (d.is_number_integer() && !raw.is_number_integer()) return "'" + spec.name + "' expects an integer";
    if (d.is_number_float() && !raw.is_number()) return "'" + spec.name + "' expects a number";
    out = d.is_number_float() ? Json(raw.get<double>()) : raw;
    return std::nullopt;
  } catch (const std::exception&) {
    return "'" + spec.name + "' has an invalid value '" + (raw.is_string() ? raw.get<std::string>() : raw.dump()) + "'";
  }
}

class RunConfig {
 public:
  /// Layers defaults, preset, file and flags; every problem is reported in a
  /// single ValidationError.
  static RunConfig resolve(const std::optional<std::filesystem::path>& file,
                           const std::map<std::string, std::string>& flags) {
    std::vector<std::string> errors;
    Json from_file = Json::object();
    if (file) {
      std::ifstream in(*file);
      if (!in) throw ValidationError("cannot open config file '" + file->string() + "'");
      try {
        from_file = Json::parse(in);
      } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config file '" + file->string() + "' is not valid JSON: " + e.what());
      }
      if (!from_file.is_object()) throw ValidationError("config file must hold a flat JSON object");
    }

    std::string preset = "desk";
    if (from_file.contains("preset") && from_file["preset"].is_string()) preset = from_file["preset"];
    if (auto it = flags.find("preset"); it != flags.end()) preset = it->second;

    RunConfig cfg;
    for (const auto& k : key_specs()) cfg.values_[k.name] = k.value;
    try {
      const Json overrides = preset_overrides(preset);
      for (const auto& [key, v] : overrides.items()) cfg.values_[key] = v;
    } catch (const ValidationError& e) {
      errors.push_back(e.what());
    }
    for (auto& [key, raw] : from_file.items()) {
      const KeySpec* spec = find_key(key);
      if (!spec) {
        errors.push_back("unknown config key '" + key + "'");
        continue;
      }
      Json v;
      if (auto err = coerce(*spec, raw, v)) errors.push_back(*err);
      else cfg.values_[key] = v;
    }
    for (const auto& [key, raw] : flags) {
      const KeySpec* spec = find_key(key);
      if (!spec) {
        errors.push_back("unknown option '--" + key + "'");
        continue;
      }
      Json v;
      if (auto err = coerce(*spec, Json(raw), v)) errors.push_back(*err);
      else cfg.values_[key] = v;
    }
    if (!errors.empty()) {
      std::string msg = "invalid configuration:";
      for (const auto& e : errors) msg += "\n  - " + e;
      throw ValidationError(msg);
    }
    return cfg;
  }

  template <class T>
  T get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ValidationError("unknown config key '" + key + "'");
    return it.value().get<T>();
  }

  std::string str(const std::string& key) const { return get<std::string>(key); }
  int integer(const std::string& key) const { return get<int>(key); }
  double number(const std::string& key) const { return get<double>(key); }
  bool flag(const std::string& key) const { return get<bool>(key); }

  /// Path-valued key that must be set.
  std::filesystem::path require_path(const std::string& key) const {
    const auto v = str(key);
    if (v.empty()) throw ValidationError("--" + key + " is required");
    return v;
  }

  const Json& json() const { return values_; }

 private:
  Json values_ = Json::object();
};

/// `stage=<stage> step=<step> metric=<name> value=<value>` lines on stderr and in
/// `<out>/log.txt`.
class Logger {
 public:
  Logger(std::string stage, const std::filesystem::path& out_dir) : stage_(std::move(stage)) {
    if (!out_dir.empty()) file_.open(out_dir / "log.txt");
  }

  template <class V>
  void log(const std::string& step, const std::string& name, const V& value) {
    std::ostringstream os;
    os << "stage=" << stage_ << " step=" << step << " metric=" << name << " value=" << value;
    std::cerr << os.str() << '\n';
    if (file_) file_ << os.str() << '\n';
  }

 private:
  std::string stage_;
  std::ofstream file_;
};

}  // namespace lfa::cli
