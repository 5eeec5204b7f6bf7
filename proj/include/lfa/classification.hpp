#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "lfa/artifact.hpp"
#include "lfa/augmentation.hpp"
#include "lfa/dataset.hpp"
#include "lfa/error.hpp"
#include "lfa/extraction.hpp"
#include "lfa/nn.hpp"
#include "lfa/rng.hpp"

namespace lfa::classification {

enum class Regime { baseline, standard, local };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::baseline: return "baseline";
    case Regime::standard: return "standard";
    case Regime::local: return "local";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "baseline") return Regime::baseline;
  if (s == "standard") return Regime::standard;
  if (s == "local") return Regime::local;
  throw ValidationError("unknown regime '" + s + "' (expected baseline, standard or local)");
}

enum class Preset { desk, full };

inline Preset parse_preset(const std::string& s) {
  if (s == "desk") return Preset::desk;
  if (s == "full") return Preset::full;
  throw ValidationError("unknown scale preset '" + s + "' (expected desk or full)");
}

struct ClassifierConfig {
  int input_size = 128;
  /// Width of the first conv layer; doubles per layer up to max_width.
  int base_width = 8;
  int max_width = 32;
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 3e-3;
  /// Learning rate is multiplied by this after each epoch.
  double lr_decay = 0.95;
  Regime regime = Regime::baseline;
  std::uint64_t seed = 0;
  augmentation::AugmentationConfig augmentation;

  static ClassifierConfig preset(Preset p) {
    ClassifierConfig c;
    if (p == Preset::full) {
      c.input_size = 512;
      c.base_width = 32;
      c.max_width = 512;
      c.epochs = 30;
      c.batch_size = 16;
    }
    return c;
  }

  /// Stride-2 conv layers needed to bring the input down to 8×8.
  int conv_layers() const {
    int n = 0;
    for (int s = input_size; s > 8; s /= 2) ++n;
    return n;
  }

  int width(int layer) const { return std::min(max_width, base_width << layer); }

  void validate() const {
    if (input_size < 8 || (input_size & (input_size - 1)) != 0)
      throw ValidationError("classifier input size must be a power of two >= 8, got " + std::to_string(input_size));
    if (base_width < 1 || max_width < base_width) throw ValidationError("invalid classifier widths");
    if (epochs < 0) throw ValidationError("epochs must be non-negative");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ValidationError("lr_decay must lie in (0,1]");
    augmentation.validate();
  }
};

struct ClassifierLog {
  std::vector<double> train_loss;  // per epoch
  std::vector<double> val_loss;    // index 0: before training
  std::vector<double> val_auc;     // index 0: before training (NaN if undefined)
  std::vector<int> inserted;       // local regime: insertions per epoch
  int best_epoch = 0;
};

/// Conv stack + global max pool + linear logit.
class Classifier {
 public:
  explicit Classifier(const ClassifierConfig& config) : config_(config) {
    config_.validate();
    int in = 1;
    for (int l = 0; l < config_.conv_layers(); ++l) {
      const int out = config_.width(l);
      net_.add<nn::Conv2d>("conv" + std::to_string(l), in, out, 4, 2, 1);
      net_.add<nn::LeakyReLU>(0.2f);
      in = out;
    }
    net_.add<nn::GlobalMaxPool>();
    net_.add<nn::Linear>("fc", in, 1);
  }

  const ClassifierConfig& config() const { return config_; }
  nn::Sequential& network() { return net_; }

  void init(std::uint64_t seed) {
    Rng rng = make_rng({seed, hash_string("classifier_init")});
    net_.init(rng);
  }

  void make_input(const std::vector<const ImageRecord*>& batch, nn::Tensor& x) const {
    const int s = config_.input_size;
    x = nn::Tensor(static_cast<int>(batch.size()), 1, s, s);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& px = batch[i]->pixels;
      if (px.width() != s || px.height() != s)
        throw ValidationError("image '" + batch[i]->image_id + "' is " + std::to_string(px.width()) + "x" +
                              std::to_string(px.height()) + ", classifier expects " + std::to_string(s));
      float* dst = x.sample(static_cast<int>(i));
      for (std::size_t k = 0; k < px.size(); ++k) dst[k] = px.data()[k] - 0.5f;
    }
  }

  std::vector<float> logits(const std::vector<const ImageRecord*>& batch) const {
    std::lock_guard lock(mutex_);
    nn::Tensor x;
    make_input(batch, x);
    return net_.forward(x, false).data;
  }

  std::vector<double> predict_batch(const std::vector<const ImageRecord*>& batch) const {
    std::vector<double> out;
    for (float z : logits(batch)) out.push_back(nn::sigmoid(z));
    return out;
  }

  /// P(nodule) in [0,1].
  double predict(const ImageRecord& r) const { return predict_batch({&r}).front(); }

 private:
  ClassifierConfig config_;
  mutable nn::Sequential net_;
  mutable std::mutex mutex_;
};

struct ClassifierModel {
  std::unique_ptr<Classifier> network;
  ClassifierLog log;

  const ClassifierConfig& config() const { return network->config(); }
  double predict(const ImageRecord& r) const { return network->predict(r); }
};

// ---------------------------------------------------------------------------
// Metrics

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counted as one half.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (doubled) average ranks of positives; doubling keeps everything integral.
  long long rank2_pos = 0, n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const long long rank2 = static_cast<long long>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] == 1) {
        rank2_pos += rank2;
        ++n_pos;
      }
    i = j;
  }
  const long long n_neg = static_cast<long long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("AUC is undefined without both classes");
  const long long u2 = rank2_pos - n_pos * (n_pos + 1);  // 2 * U statistic
  return static_cast<double>(u2) / (2.0 * static_cast<double>(n_pos * n_neg));
}

struct EvalResult {
  double auc = 0.0;
  int n_pos = 0;
  int n_neg = 0;
};

template <extraction::ImageScorer C>
std::vector<double> predict_all(const C& model, const std::vector<ImageRecord>& records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(model.predict(r));
  return out;
}

inline std::vector<double> predict_all(const ClassifierModel& model, const std::vector<ImageRecord>& records) {
  std::vector<double> out;
  const std::size_t chunk = 64;
  for (std::size_t s = 0; s < records.size(); s += chunk) {
    std::vector<const ImageRecord*> batch;
    for (std::size_t i = s; i < std::min(records.size(), s + chunk); ++i) batch.push_back(&records[i]);
    for (double p : model.network->predict_batch(batch)) out.push_back(p);
  }
  return out;
}

template <class C>
EvalResult evaluate(const C& model, const std::vector<ImageRecord>& records) {
  std::vector<int> labels;
  for (const auto& r : records) labels.push_back(r.nodule_label);
  EvalResult e;
  e.n_pos = static_cast<int>(std::count(labels.begin(), labels.end(), 1));
  e.n_neg = static_cast<int>(labels.size()) - e.n_pos;
  e.auc = auc(predict_all(model, records), labels);
  return e;
}

// ---------------------------------------------------------------------------
// Training

struct TrainOptions {
  /// Called after each epoch with (epoch, train loss, val loss).
  std::function<void(int, double, double)> on_epoch;
  /// Called with each local-regime epoch plan.
  std::function<void(const augmentation::EpochPlan&)> on_plan;
};

namespace detail {

inline double mean_bce(const Classifier& net, const std::vector<ImageRecord>& records, std::vector<double>* probs) {
  double total = 0.0;
  const std::size_t chunk = 64;
  for (std::size_t s = 0; s < records.size(); s += chunk) {
    std::vector<const ImageRecord*> batch;
    std::vector<float> targets;
    for (std::size_t i = s; i < std::min(records.size(), s + chunk); ++i) {
      batch.push_back(&records[i]);
      targets.push_back(static_cast<float>(records[i].nodule_label));
    }
    const auto z = net.logits(batch);
    total += nn::bce_with_logits(z, targets, nullptr) * batch.size();
    if (probs)
      for (float v : z) probs->push_back(nn::sigmoid(v));
  }
  return total / records.size();
}

inline double safe_auc(const std::vector<double>& p, const std::vector<ImageRecord>& records) {
  std::vector<int> labels;
  for (const auto& r : records) labels.push_back(r.nodule_label);
  const auto pos = std::count(labels.begin(), labels.end(), 1);
  if (pos == 0 || pos == static_cast<long>(labels.size())) return std::numeric_limits<double>::quiet_NaN();
  return auc(p, labels);
}

}  // namespace detail

/// The training stream for one epoch under the configured regime.
inline std::vector<ImageRecord> epoch_stream(const ClassifierConfig& config, const std::vector<ImageRecord>& train,
                                             const std::vector<extraction::NoduleAsset>& bank, int epoch,
                                             augmentation::EpochPlan* plan_out = nullptr) {
  switch (config.regime) {
    case Regime::baseline:
      return train;
    case Regime::standard: {
      std::vector<ImageRecord> out;
      out.reserve(train.size());
      for (const auto& r : train) {
        Rng rng = make_rng({config.seed, static_cast<std::uint64_t>(epoch), hash_string(r.image_id),
                            hash_string("standard_augment")});
        out.push_back(augmentation::standard_augment(r, rng));
      }
      return out;
    }
    case Regime::local: {
      auto aug = config.augmentation;
      aug.seed = derive_seed({config.seed, hash_string("local_augment")});
      auto plan = augmentation::plan_epoch(train, bank, aug, epoch);
      auto out = augmentation::apply_plan(train, bank, plan);
      if (plan_out) *plan_out = std::move(plan);
      return out;
    }
  }
  return train;
}

/// Trains with BCE and Adam; the returned weights are those of the epoch with
/// the lowest validation loss (the last epoch when `val` is empty).
inline ClassifierModel train_classifier(const ClassifierConfig& config, const std::vector<ImageRecord>& train,
                                        const std::vector<ImageRecord>& val,
                                        const std::vector<extraction::NoduleAsset>& bank = {},
                                        const TrainOptions& options = {}) {
  config.validate();
  if (train.empty()) throw ValidationError("classifier training set is empty");
  if (config.regime == Regime::local) {
    if (config.augmentation.k > 0.0 && bank.empty())
      throw ValidationError("local regime needs a non-empty nodule bank");
    if (std::none_of(train.begin(), train.end(), augmentation::eligible))
      throw ValidationError("local regime needs negatives with lung masks");
  }

  ClassifierModel model{std::make_unique<Classifier>(config), {}};
  Classifier& net = *model.network;
  net.init(config.seed);
  auto params = net.network().parameters();
  nn::Adam opt(params, {config.learning_rate, 0.9, 0.999, 1e-8});

  std::vector<std::vector<float>> best;
  double best_val = std::numeric_limits<double>::infinity();
  auto snapshot = [&] {
    best.clear();
    for (auto* p : params) best.push_back(p->value);
  };
  auto record_val = [&]() -> double {
    if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> probs;
    const double l = detail::mean_bce(net, val, &probs);
    model.log.val_loss.push_back(l);
    model.log.val_auc.push_back(detail::safe_auc(probs, val));
    return l;
  };
  record_val();
  snapshot();

  std::vector<std::size_t> order(train.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    augmentation::EpochPlan plan;
    const auto stream = epoch_stream(config, train, bank, epoch, &plan);
    if (config.regime == Regime::local) {
      model.log.inserted.push_back(plan.inserted());
      if (options.on_plan) options.on_plan(plan);
    }
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng({config.seed, static_cast<std::uint64_t>(epoch), hash_string("classifier_shuffle")});
    shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t s = 0; s < order.size(); s += config.batch_size) {
      std::vector<const ImageRecord*> batch;
      std::vector<float> targets;
      for (std::size_t i = s; i < std::min(order.size(), s + config.batch_size); ++i) {
        batch.push_back(&stream[order[i]]);
        targets.push_back(static_cast<float>(stream[order[i]].nodule_label));
      }
      nn::Tensor x;
      net.make_input(batch, x);
      opt.zero_grad();
      const nn::Tensor z = net.network().forward(x, true);
      std::vector<float> dz;
      const double loss = nn::bce_with_logits(z.data, targets, &dz);
      if (!std::isfinite(loss))
        throw RuntimeFailure("classifier training diverged at epoch " + std::to_string(epoch));
      nn::Tensor g(z.n, 1, 1, 1);
      g.data = std::move(dz);
      net.network().backward(g);
      opt.step();
      total += loss * batch.size();
    }
    const double train_loss = total / order.size();
    model.log.train_loss.push_back(train_loss);
    const double val_loss = record_val();
    if (!val.empty() && !std::isfinite(val_loss))
      throw RuntimeFailure("classifier validation loss became non-finite at epoch " + std::to_string(epoch));
    if (val.empty() || val_loss < best_val) {
      best_val = val_loss;
      model.log.best_epoch = epoch;
      snapshot();
    }
    if (options.on_epoch) options.on_epoch(epoch, train_loss, val_loss);
    opt.set_learning_rate(config.learning_rate * std::pow(config.lr_decay, epoch));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best[i];
  return model;
}

// ---------------------------------------------------------------------------
// Persistence

inline artifact::Json config_to_json(const ClassifierConfig& c) {
  artifact::Json j;
  j["input_size"] = c.input_size;
  j["base_width"] = c.base_width;
  j["max_width"] = c.max_width;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["lr_decay"] = c.lr_decay;
  j["regime"] = to_string(c.regime);
  j["seed"] = c.seed;
  j["k"] = c.augmentation.k;
  j["flip_h"] = c.augmentation.flip_h;
  j["flip_v"] = c.augmentation.flip_v;
  j["max_location_attempts"] = c.augmentation.max_location_attempts;
  return j;
}

inline ClassifierConfig config_from_json(const artifact::Json& j) {
  ClassifierConfig c;
  c.input_size = j.at("input_size").get<int>();
  c.base_width = j.at("base_width").get<int>();
  c.max_width = j.at("max_width").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.lr_decay = j.at("lr_decay").get<double>();
  c.regime = parse_regime(j.at("regime").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.augmentation.k = j.at("k").get<double>();
  c.augmentation.flip_h = j.at("flip_h").get<bool>();
  c.augmentation.flip_v = j.at("flip_v").get<bool>();
  c.augmentation.max_location_attempts = j.at("max_location_attempts").get<int>();
  c.validate();
  return c;
}

inline void save_model(const ClassifierModel& model, const std::filesystem::path& dir) {
  artifact::Json body;
  body["config"] = config_to_json(model.config());
  auto arr = [](const auto& v) {
    artifact::Json a = artifact::Json::array();
    for (auto x : v) a.push_back(artifact::number(x));
    return a;
  };
  artifact::Json t;
  t["train_loss"] = arr(model.log.train_loss);
  t["val_loss"] = arr(model.log.val_loss);
  t["val_auc"] = arr(model.log.val_auc);
  t["inserted"] = model.log.inserted;
  t["best_epoch"] = model.log.best_epoch;
  body["training"] = t;
  artifact::write_metadata(dir, "classifier", body);
  nn::save_parameters(model.network->network().parameters(), (dir / artifact::kParamsFile).string());
}

inline ClassifierModel load_model(const std::filesystem::path& dir) {
  const auto meta = artifact::read_metadata(dir, "classifier");
  ClassifierModel model{std::make_unique<Classifier>(config_from_json(meta.at("config"))), {}};
  const auto& t = meta.at("training");
  for (const auto& v : t.at("train_loss")) model.log.train_loss.push_back(artifact::to_double(v));
  for (const auto& v : t.at("val_loss")) model.log.val_loss.push_back(artifact::to_double(v));
  for (const auto& v : t.at("val_auc")) model.log.val_auc.push_back(artifact::to_double(v));
  model.log.inserted = t.at("inserted").get<std::vector<int>>();
  model.log.best_epoch = t.at("best_epoch").get<int>();
  nn::load_parameters(model.network->network().parameters(), (dir / artifact::kParamsFile).string());
  return model;
}

// ---------------------------------------------------------------------------
// Learning curve

/// Patient-wise subsample holding ceil(fraction * patients) patients. Depends
/// only on (records, fraction, seed).
inline std::vector<ImageRecord> subsample_patients(const std::vector<ImageRecord>& records, double fraction,
                                                   std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("fraction must lie in (0,1]");
  std::set<std::string> all;
  for (const auto& r : records) all.insert(r.patient_id);
  std::vector<std::string> patients(all.begin(), all.end());
  std::vector<ImageRecord> out;
  if (fraction == 1.0) {
    out = records;
  } else {
    Rng rng = make_rng({seed, hash_string("subsample"), static_cast<std::uint64_t>(std::llround(fraction * 1e6))});
    shuffle(patients.begin(), patients.end(), rng);
    const auto keep = static_cast<std::size_t>(std::ceil(fraction * patients.size() - 1e-9));
    const std::set<std::string> chosen(patients.begin(), patients.begin() + std::max<std::size_t>(1, keep));
    for (const auto& r : records)
      if (chosen.count(r.patient_id)) out.push_back(r);
  }
  if (std::none_of(out.begin(), out.end(), [](const ImageRecord& r) { return r.nodule_label == 1; }))
    throw ValidationError("training fraction " + std::to_string(fraction) + " leaves no positive images");
  return out;
}

struct CurveRow {
  Regime regime;
  double fraction;
  int repeat;
  std::uint64_t seed;
  double auc;
};

struct CurveOptions {
  std::vector<double> fractions{1.0, 0.7, 0.5, 0.2, 0.1, 0.05};
  int repeats = 3;
  std::vector<Regime> regimes{Regime::baseline, Regime::standard, Regime::local};
  std::uint64_t subsample_seed = 0;
  std::function<void(const CurveRow&)> on_row;
};

/// Every (regime, fraction, repeat) cell: the subsample depends only on the
/// fraction, repeats differ only in the training seed.
inline std::vector<CurveRow> learning_curve(const ClassifierConfig& base, const SplitRecords& split,
                                            const std::vector<extraction::NoduleAsset>& bank,
                                            const CurveOptions& options) {
  if (options.repeats < 1) throw ValidationError("repeats must be >= 1");
  std::vector<CurveRow> rows;
  for (double f : options.fractions) {
    const auto train = subsample_patients(split.train, f, options.subsample_seed);
    for (Regime regime : options.regimes)
      for (int rep = 0; rep < options.repeats; ++rep) {
        ClassifierConfig c = base;
        c.regime = regime;
        c.seed = derive_seed({base.seed, static_cast<std::uint64_t>(rep)});
        const auto model = train_classifier(c, train, split.val, bank);
        CurveRow row{regime, f, rep, c.seed, evaluate(model, split.test).auc};
        if (options.on_row) options.on_row(row);
        rows.push_back(row);
      }
  }
  return rows;
}

inline std::string format_fraction(double f) {
  std::ostringstream os;
  os << f;
  return os.str();
}

inline std::string curve_csv(const std::vector<CurveRow>& rows) {
  std::ostringstream os;
  os << "regime,fraction,repeat,auc\n" << std::setprecision(17);
  for (const auto& r : rows) os << to_string(r.regime) << ',' << format_fraction(r.fraction) << ',' << r.repeat << ',' << r.auc << '\n';
  return os.str();
}

struct CellStats {
  double mean = 0.0;
  double stddev = 0.0;
  int n = 0;
};

/// Mean and sample std of AUC per (regime, fraction).
inline std::map<std::pair<Regime, double>, CellStats> curve_summary(const std::vector<CurveRow>& rows) {
  std::map<std::pair<Regime, double>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{r.regime, r.fraction}].push_back(r.auc);
  std::map<std::pair<Regime, double>, CellStats> out;
  for (const auto& [key, v] : groups) {
    CellStats s;
    s.n = static_cast<int>(v.size());
    s.mean = std::accumulate(v.begin(), v.end(), 0.0) / s.n;
    double ss = 0.0;
    for (double a : v) ss += (a - s.mean) * (a - s.mean);
    s.stddev = s.n > 1 ? std::sqrt(ss / (s.n - 1)) : 0.0;
    out[key] = s;
  }
  return out;
}

/// Regimes as rows, training fractions (descending) as columns, "mean ± std".
inline std::string curve_table(const std::vector<CurveRow>& rows) {
  const auto summary = curve_summary(rows);
  std::vector<double> fractions;
  std::vector<Regime> regimes;
  for (const auto& r : rows) {
    if (std::find(fractions.begin(), fractions.end(), r.fraction) == fractions.end()) fractions.push_back(r.fraction);
    if (std::find(regimes.begin(), regimes.end(), r.regime) == regimes.end()) regimes.push_back(r.regime);
  }
  std::sort(fractions.rbegin(), fractions.rend());
  std::ostringstream os;
  os << std::left << std::setw(10) << "regime";
  for (double f : fractions) os << std::setw(17) << (format_fraction(f * 100) + "%");
  os << '\n' << std::fixed << std::setprecision(3);
  for (Regime g : regimes) {
    os << std::setw(10) << to_string(g);
    for (double f : fractions) {
      auto it = summary.find({g, f});
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(3);
      if (it == summary.end())
        cell << "-";
      else
        cell << it->second.mean << " ± " << it->second.stddev;
      os << std::setw(17) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace lfa::classification
