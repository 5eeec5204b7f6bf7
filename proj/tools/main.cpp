// lfa: command-line entry point for every pipeline stage.

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "lfa/attention.hpp"
#include "lfa/augmentation.hpp"
#include "lfa/classification.hpp"
#include "lfa/csv.hpp"
#include "lfa/dataset.hpp"
#include "lfa/extraction.hpp"
#include "lfa/inpainting.hpp"
#include "lfa/phantom.hpp"
#include "lfa/png_io.hpp"
#include "lfa/provenance.hpp"

namespace fs = std::filesystem;
using namespace lfa;
using cli::RunConfig;

namespace {

// ---------------------------------------------------------------------------
// Shared plumbing

fs::path prepare_out(const RunConfig& cfg) {
  const fs::path out = cfg.require_path("out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw RuntimeFailure("cannot create '" + out.string() + "': " + ec.message());
  return out;
}

/// resolved_config.json plus inputs.sha1: the combined hash on the first
/// line, then one "<hash> <name>" line per input file and one for the
/// non-path settings.
void record_provenance(const RunConfig& cfg, const fs::path& out, const std::vector<std::string>& input_keys) {
  artifact::write_json(out / "resolved_config.json", cfg.json());
  std::vector<provenance::HashEntry> entries;
  for (const auto& key : input_keys) {
    const auto v = cfg.str(key);
    if (!v.empty()) {
      auto part = provenance::hash_tree(v, key);
      // A model or bank directory may contain our own provenance files.
      std::erase_if(part, [](const provenance::HashEntry& e) {
        return e.name.ends_with("/log.txt") || e.name.ends_with("/inputs.sha1");
      });
      entries.insert(entries.end(), part.begin(), part.end());
    }
  }
  // Settings without path keys.
  auto settings = cfg.json();
  for (const char* key : {"out", "data_dir", "patches_dir", "inpainter", "classifier", "bank"}) settings.erase(key);
  entries.push_back({"settings", provenance::blob_hash(settings.dump())});
  std::ofstream f(out / "inputs.sha1");
  f << provenance::combine(entries) << '\n';
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
  for (const auto& e : entries) f << e.hash << ' ' << e.name << '\n';
  if (!f) throw RuntimeFailure("cannot write '" + (out / "inputs.sha1").string() + "'");
}

std::vector<ImageRecord> load_data(const RunConfig& cfg) {
  const fs::path dir = cfg.require_path("data_dir");
  std::optional<fs::path> bboxes, masks;
  if (fs::exists(dir / "bboxes.csv")) bboxes = dir / "bboxes.csv";
  if (fs::is_directory(dir / "masks")) masks = dir / "masks";
  LoadOptions opt;
  opt.working_size = cfg.integer("working_size");
  return load_dataset(dir / "images", dir / "labels.csv", bboxes, masks, opt);
}

SplitRecords split_data(const RunConfig& cfg, const std::vector<ImageRecord>& records) {
  SplitFractions fr{cfg.number("train_fraction"), cfg.number("val_fraction"), cfg.number("test_fraction")};
  std::set<std::string> pinned;
  if (cfg.flag("pin_boxed"))
    for (const auto& r : records)
      if (!r.bboxes.empty()) pinned.insert(r.image_id);
  return materialize(records, split_by_patient(records, fr, static_cast<std::uint64_t>(cfg.integer("split_seed")), pinned));
}

MaskSpec mask_spec(const RunConfig& cfg) { return {cfg.integer("patch_size"), cfg.integer("mask_size")}; }

inpainting::InpainterSpec inpainter_spec(const RunConfig& cfg) {
  inpainting::InpainterSpec s;
  s.patch_size = cfg.integer("patch_size");
  s.mask_size = cfg.integer("mask_size");
  s.gamma = cfg.number("gamma");
  s.channel_divisor = cfg.integer("channel_divisor");
  s.rec_loss_weight = cfg.number("rec_loss_weight");
  s.adv_loss_weight = cfg.number("adv_loss_weight");
  const auto norm = cfg.str("norm");
  if (norm != "l1" && norm != "l2") throw ValidationError("norm must be l1 or l2");
  s.norm = norm == "l1" ? inpainting::ReconstructionNorm::l1 : inpainting::ReconstructionNorm::l2;
  s.fill_value = static_cast<float>(cfg.number("fill_value"));
  s.batch_size = cfg.integer("inpainter_batch_size");
  s.generator_optimizer.learning_rate = cfg.number("inpainter_lr");
  s.discriminator_optimizer.learning_rate = cfg.number("discriminator_lr");
  s.validate();
  return s;
}

classification::ClassifierConfig classifier_config(const RunConfig& cfg, int input_size) {
  classification::ClassifierConfig c;
  c.input_size = input_size;
  c.base_width = cfg.integer("base_width");
  c.max_width = cfg.integer("max_width");
  c.epochs = cfg.integer("classifier_epochs");
  c.batch_size = cfg.integer("classifier_batch_size");
  c.learning_rate = cfg.number("classifier_lr");
  c.lr_decay = cfg.number("lr_decay");
  c.regime = classification::parse_regime(cfg.str("regime"));
  c.seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  c.augmentation.k = cfg.number("k");
  c.augmentation.flip_h = cfg.flag("flip_h");
  c.augmentation.flip_v = cfg.flag("flip_v");
  c.augmentation.max_location_attempts = cfg.integer("max_location_attempts");
  c.validate();
  return c;
}

extraction::ExtractionParams extraction_params(const RunConfig& cfg) {
  extraction::ExtractionParams p;
  p.mask_spec = mask_spec(cfg);
  p.fill_value = static_cast<float>(cfg.number("fill_value"));
  if (cfg.flag("bilateral")) {
    BilateralParams b{cfg.integer("bilateral_window"), cfg.number("sigma_space"), cfg.number("sigma_intensity")};
    b.validate();
    p.filter = b;
  } else {
    p.filter.reset();
  }
  p.support_epsilon = cfg.number("support_epsilon");
  return p;
}

int input_size_of(const std::vector<ImageRecord>& records) {
  if (records.empty()) throw ValidationError("dataset is empty");
  const int s = records.front().width();
  for (const auto& r : records)
    if (r.width() != s || r.height() != s)
      throw ValidationError("classifier needs square images of one size; set --working_size");
  return s;
}

std::vector<double> parse_fractions(const std::string& s) {
  std::vector<double> out;
  for (const auto& f : csv::split(s, ',')) {
    try {
      std::size_t used = 0;
      const std::string t(csv::trim(f));
      out.push_back(std::stod(t, &used));
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw ValidationError("invalid fraction '" + f + "'");
    }
    if (!(out.back() > 0.0 && out.back() <= 1.0)) throw ValidationError("fractions must lie in (0,1]");
  }
  if (out.empty()) throw ValidationError("no fractions given");
  return out;
}

// Patch directories: <split>/index.csv (patch_id,source_id,x,y) + <patch_id>.png
void write_patches(const std::vector<Patch>& patches, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream idx(dir / "index.csv");
  idx << "patch_id,source_id,x,y\n";
  char name[32];
  for (std::size_t i = 0; i < patches.size(); ++i) {
    std::snprintf(name, sizeof name, "patch_%07zu", i);
    png::write_gray(dir / (std::string(name) + ".png"), patches[i].pixels, 16);
    idx << name << ',' << patches[i].source_id << ',' << patches[i].origin.x << ',' << patches[i].origin.y << '\n';
  }
  if (!idx) throw RuntimeFailure("cannot write '" + (dir / "index.csv").string() + "'");
}

std::vector<Patch> read_patches(const fs::path& dir) {
  const auto t = csv::read(dir / "index.csv", {"patch_id", "source_id", "x", "y"});
  const int c_id = t.column("patch_id"), c_src = t.column("source_id"), c_x = t.column("x"), c_y = t.column("y");
  std::vector<Patch> out;
  out.reserve(t.rows.size());
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    Patch p;
    p.pixels = png::read_gray(dir / (row[c_id] + ".png")).pixels;
    p.source_id = row[c_src];
    p.origin = {csv::to_int(row[c_x], "x"), csv::to_int(row[c_y], "y")};
    out.push_back(std::move(p));
  }
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_phantom_gen(const RunConfig& cfg) {
  const auto out = prepare_out(cfg);
  cli::Logger log("phantom-gen", out);
  phantom::PhantomSpec spec;
  spec.image_size = cfg.integer("image_size");
  spec.min_amplitude = cfg.number("min_amplitude");
  spec.max_amplitude = cfg.number("max_amplitude");
  spec.min_radius = cfg.number("min_radius");
  spec.max_radius = cfg.number("max_radius");
  spec.noise_sigma = cfg.number("noise_sigma");
  const auto samples = phantom::generate_phantom_dataset(cfg.integer("n_images"), cfg.number("nodule_fraction"), spec,
                                                         static_cast<std::uint64_t>(cfg.integer("seed")), out);
  int positives = 0;
  for (const auto& s : samples) positives += s.record.nodule_label;
  log.log("done", "images", samples.size());
  log.log("done", "positives", positives);
  record_provenance(cfg, out, {});
  return 0;
}

int cmd_prepare_patches(const RunConfig& cfg) {
  const auto records = load_data(cfg);
  const auto split = split_data(cfg, records);
  const auto out = prepare_out(cfg);
  cli::Logger log("prepare-patches", out);
  const int p = cfg.integer("patch_size");
  (void)mask_spec(cfg);
  const auto seed = static_cast<std::uint64_t>(cfg.integer("seed"));
  std::ofstream sf(out / "split.csv");
  sf << "image_id,patient_id,split\n";
  for (const auto& [name, set] : {std::pair{"train", &split.train}, {"val", &split.val}, {"test", &split.test}})
    for (const auto& r : *set) sf << r.image_id << ',' << r.patient_id << ',' << name << '\n';
  struct Job { const char* name; const std::vector<ImageRecord>* set; const char* count_key; };
  for (const Job& j : {Job{"train", &split.train, "n_train_patches"}, Job{"val", &split.val, "n_val_patches"},
                       Job{"test", &split.test, "n_test_patches"}}) {
    const auto patches = sample_random_patches(*j.set, cfg.integer(j.count_key), p,
                                               derive_seed({seed, hash_string(j.name)}), true);
    write_patches(patches, out / j.name);
    log.log(j.name, "patches", patches.size());
  }
  record_provenance(cfg, out, {"data_dir"});
  return 0;
}

int cmd_train_inpainter(const RunConfig& cfg) {
  const fs::path pdir = cfg.require_path("patches_dir");
  const auto spec = inpainter_spec(cfg);
  const auto train = read_patches(pdir / "train");
  const auto val = fs::exists(pdir / "val" / "index.csv") ? read_patches(pdir / "val") : std::vector<Patch>{};
  const auto out = prepare_out(cfg);
  cli::Logger log("train-inpainter", out);
  std::ofstream metrics(out / "metrics.csv");
  metrics << "epoch,train_loss,val_loss\n";
  inpainting::TrainOptions opt;
  opt.on_epoch = [&](int e, double tl, double vl) {
    log.log(std::to_string(e), "train_loss", fmt(tl));
    log.log(std::to_string(e), "val_loss", fmt(vl));
    metrics << e << ',' << fmt(tl) << ',' << fmt(vl) << '\n';
  };
  const auto model = inpainting::train_inpainter(spec, train, val, cfg.integer("inpainter_epochs"),
                                                 static_cast<std::uint64_t>(cfg.integer("seed")), opt);
  inpainting::save_model(model, out);
  record_provenance(cfg, out, {"patches_dir"});
  return 0;
}

int cmd_eval_inpainter(const RunConfig& cfg) {
  const fs::path pdir = cfg.require_path("patches_dir");
  const auto test = read_patches(pdir / "test");
  const auto oracle = cfg.str("oracle");
  const auto out = prepare_out(cfg);
  cli::Logger log("eval-inpainter", out);
  const float fill = static_cast<float>(cfg.number("fill_value"));
  inpainting::InpaintingReport report;
  if (oracle == "perfect") {
    report = inpainting::evaluate_inpainter(inpainting::ReferenceInpainter::from_patches(test), test, mask_spec(cfg),
                                            fill, "perfect-oracle");
  } else if (oracle == "mean-fill") {
    report = inpainting::evaluate_inpainter(inpainting::MeanFillInpainter{}, test, mask_spec(cfg), fill, "mean-fill-model");
  } else if (oracle.empty()) {
    const auto model = inpainting::load_model(cfg.require_path("inpainter"));
    report = inpainting::evaluate_inpainter(model, test, model.spec().mask_spec(), model.spec().fill_value);
  } else {
    throw ValidationError("unknown oracle '" + oracle + "' (expected perfect or mean-fill)");
  }
  std::ofstream f(out / "psnr.csv");
  f << "row,mean_psnr,std_psnr,n\n";
  for (const auto* s : {&report.model, &report.mean_fill}) {
    f << s->label << ',' << fmt(s->mean) << ',' << fmt(s->stddev) << ',' << s->count << '\n';
    log.log(s->label, "mean_psnr", fmt(s->mean));
    log.log(s->label, "std_psnr", fmt(s->stddev));
    std::cout << std::left << std::setw(16) << s->label << std::fixed << std::setprecision(2) << s->mean << " ± "
              << s->stddev << " dB  (n=" << s->count << ")\n";
  }
  std::ofstream pp(out / "psnr_per_patch.csv");
  pp << "index,model,mean_fill\n";
  for (std::size_t i = 0; i < report.model_psnr.size(); ++i)
    pp << i << ',' << fmt(report.model_psnr[i]) << ',' << fmt(report.mean_fill_psnr[i]) << '\n';
  record_provenance(cfg, out, {"patches_dir", "inpainter"});
  return 0;
}

int cmd_train_classifier(const RunConfig& cfg) {
  const auto records = load_data(cfg);
  const auto split = split_data(cfg, records);
  auto config = classifier_config(cfg, input_size_of(records));
  std::vector<extraction::NoduleAsset> bank;
  if (config.regime == classification::Regime::local) bank = extraction::load_bank(cfg.require_path("bank"));
  const auto out = prepare_out(cfg);
  cli::Logger log("train-classifier", out);
  std::ofstream metrics(out / "metrics.csv");
  metrics << "epoch,train_loss,val_loss\n";
  classification::TrainOptions opt;
  opt.on_epoch = [&](int e, double tl, double vl) {
    log.log(std::to_string(e), "train_loss", fmt(tl));
    log.log(std::to_string(e), "val_loss", fmt(vl));
    metrics << e << ',' << fmt(tl) << ',' << fmt(vl) << '\n';
  };
  if (cfg.flag("dump_plans")) {
    fs::create_directories(out / "plans");
    opt.on_plan = [&](const augmentation::EpochPlan& plan) {
      std::ofstream f(out / "plans" / ("epoch_" + std::to_string(plan.epoch) + ".jsonl"));
      f << augmentation::dump_plan(plan);
      log.log(std::to_string(plan.epoch), "inserted", plan.inserted());
    };
  }
  const auto model = classification::train_classifier(config, split.train, split.val, bank, opt);
  classification::save_model(model, out);
  const auto eval = classification::evaluate(model, split.test);
  std::ofstream ev(out / "eval.csv");
  ev << "split,auc,n_pos,n_neg\n" << "test," << fmt(eval.auc) << ',' << eval.n_pos << ',' << eval.n_neg << '\n';
  log.log("test", "auc", fmt(eval.auc));
  record_provenance(cfg, out, {"data_dir", "bank"});
  return 0;
}

int cmd_extract_nodules(const RunConfig& cfg) {
  const auto records = load_data(cfg);
  const auto split = split_data(cfg, records);
  const auto inpainter = inpainting::load_model(cfg.require_path("inpainter"));
  const auto classifier = classification::load_model(cfg.require_path("classifier"));
  const auto out = prepare_out(cfg);
  cli::Logger log("extract-nodules", out);
  extraction::BankOptions opt;
  opt.extraction = extraction_params(cfg);
  opt.extraction.mask_spec = inpainter.spec().mask_spec();
  opt.threshold = cfg.number("gate_threshold");
  record_provenance(cfg, out, {"data_dir", "inpainter", "classifier"});
  {
    std::ifstream h(out / "inputs.sha1");
    std::getline(h, opt.config_hash);
  }
  const auto summary = extraction::build_nodule_bank(inpainter, classifier, split.train, opt, out);
  log.log("done", "candidates", summary.candidates);
  log.log("done", "accepted", summary.accepted);
  log.log("done", "rejected_by_gate", summary.rejected_by_gate);
  log.log("done", "rejected_by_geometry", summary.rejected_by_geometry);
  return 0;
}

int cmd_attention_map(const RunConfig& cfg) {
  const auto records = load_data(cfg);
  const auto inpainter = inpainting::load_model(cfg.require_path("inpainter"));
  const auto classifier = classification::load_model(cfg.require_path("classifier"));
  std::string id = cfg.str("image_id");
  if (id.empty()) {
    for (const auto& r : split_data(cfg, records).test)
      if (r.nodule_label == 1) {
        id = r.image_id;
        break;
      }
    if (id.empty()) throw ValidationError("no nodule image in the test split; pass --image_id");
  }
  const auto it = std::find_if(records.begin(), records.end(), [&](const ImageRecord& r) { return r.image_id == id; });
  if (it == records.end()) throw ValidationError("unknown image_id '" + id + "'");
  const MaskSpec ms = inpainter.spec().mask_spec();
  const int stride = cfg.integer("stride") > 0 ? cfg.integer("stride") : ms.mask_size() / 2;
  const auto out = prepare_out(cfg);
  cli::Logger log("attention-map", out);
  const auto map = attention::attention_map(inpainter, classifier, *it, ms, stride, inpainter.spec().fill_value);
  attention::render_heatmap(map, *it, out / "overlay.png");
  attention::write_raw(map, out / "map.png");
  const auto [lo, hi] = map.range();
  const Point m = map.argmin();
  artifact::Json j;
  j["image_id"] = id;
  j["stride"] = stride;
  j["min"] = lo;
  j["max"] = hi;
  j["argmin"] = {{"x", m.x}, {"y", m.y}};
  j["score"] = classifier.predict(*it);
  artifact::write_json(out / "attention.json", j);
  log.log(id, "min", fmt(lo));
  log.log(id, "max", fmt(hi));
  record_provenance(cfg, out, {"data_dir", "inpainter", "classifier"});
  return 0;
}

int cmd_learning_curve(const RunConfig& cfg) {
  const auto records = load_data(cfg);
  const auto split = split_data(cfg, records);
  const auto base = classifier_config(cfg, input_size_of(records));
  classification::CurveOptions opt;
  opt.fractions = parse_fractions(cfg.str("fractions"));
  opt.repeats = cfg.integer("repeats");
  opt.regimes.clear();
  for (const auto& r : csv::split(cfg.str("regimes"), ',')) opt.regimes.push_back(classification::parse_regime(std::string(csv::trim(r))));
  if (opt.regimes.empty()) throw ValidationError("no regimes given");
  opt.subsample_seed = static_cast<std::uint64_t>(cfg.integer("subsample_seed"));
  std::vector<extraction::NoduleAsset> bank;
  if (std::count(opt.regimes.begin(), opt.regimes.end(), classification::Regime::local))
    bank = extraction::load_bank(cfg.require_path("bank"));
  const auto out = prepare_out(cfg);
  cli::Logger log("learning-curve", out);
  opt.on_row = [&](const classification::CurveRow& row) {
    log.log(std::string(classification::to_string(row.regime)) + "/" + classification::format_fraction(row.fraction) +
                "/" + std::to_string(row.repeat),
            "auc", fmt(row.auc));
  };
  const auto rows = classification::learning_curve(base, split, bank, opt);
  std::ofstream(out / "learning_curve.csv") << classification::curve_csv(rows);
  const auto table = classification::curve_table(rows);
  std::ofstream(out / "learning_curve.txt") << table;
  std::cout << table;
  record_provenance(cfg, out, {"data_dir", "bank"});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Local feature augmentation pipeline for chest radiograph nodule classification"};
  app.require_subcommand(1, 1);

  const std::vector<std::pair<std::string, std::function<int(const RunConfig&)>>> commands = {
      {"phantom-gen", cmd_phantom_gen},
      {"prepare-patches", cmd_prepare_patches},
      {"train-inpainter", cmd_train_inpainter},
      {"eval-inpainter", cmd_eval_inpainter},
      {"extract-nodules", cmd_extract_nodules},
      {"train-classifier", cmd_train_classifier},
      {"attention-map", cmd_attention_map},
      {"learning-curve", cmd_learning_curve},
  };
  const std::map<std::string, std::string> descriptions = {
      {"phantom-gen", "generate a synthetic radiograph dataset"},
      {"prepare-patches", "split a dataset patient-wise and sample nodule-free patches"},
      {"train-inpainter", "train the context-encoder inpainter"},
      {"eval-inpainter", "PSNR of an inpainter against the mean-fill baseline"},
      {"extract-nodules", "build the gated nodule bank"},
      {"train-classifier", "train a nodule classifier (baseline, standard or local)"},
      {"attention-map", "inpainting-occlusion attention map of one image"},
      {"learning-curve", "AUC over training-set fractions for each regime"},
  };

  std::string config_file;
  std::map<std::string, std::map<std::string, std::string>> raw;  // subcommand -> key -> value
  std::map<std::string, std::vector<std::pair<std::string, CLI::Option*>>> opts;
  for (const auto& [name, fn] : commands) {
    auto* sub = app.add_subcommand(name, descriptions.at(name));
    sub->add_option("--config", config_file, "flat JSON config file");
    for (const auto& k : cli::key_specs()) {
      auto* o = sub->add_option("--" + k.name, raw[name][k.name], k.help);
      opts[name].emplace_back(k.name, o);
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  for (const auto& [name, fn] : commands) {
    if (!app.got_subcommand(name)) continue;
    try {
      std::map<std::string, std::string> flags;
      for (const auto& [key, o] : opts[name])
        if (o->count() > 0) flags[key] = raw[name][key];
      const auto cfg = RunConfig::resolve(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), flags);
      return fn(cfg);
    } catch (const ValidationError& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return 2;
    }
  }
  return 2;
}
