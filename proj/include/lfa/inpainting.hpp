#pragma once

#include <cmath>
#include <concepts>
#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "lfa/artifact.hpp"
#include "lfa/dataset.hpp"
#include "lfa/error.hpp"
#include "lfa/grid.hpp"
#include "lfa/nn.hpp"
#include "lfa/rng.hpp"

namespace lfa::inpainting {

enum class Part { encoder, adversarial, decoder };

inline const char* to_string(Part p) {
  switch (p) {
    case Part::encoder: return "encoder";
    case Part::adversarial: return "adversarial";
    case Part::decoder: return "decoder";
  }
  return "?";
}

inline constexpr int layer_count(Part p) { return p == Part::encoder ? 5 : 4; }

/// Channel width of layer `l`: 2^(8+l) for the encoder and adversarial
/// network, 2^(12-l) for the decoder.
inline int channel_size(Part part, int l) {
  if (l < 0 || l >= layer_count(part))
    throw ValidationError(std::string("layer index ") + std::to_string(l) + " out of range for " +
                          to_string(part) + " (0.." + std::to_string(layer_count(part) - 1) + ")");
  return part == Part::decoder ? 1 << (12 - l) : 1 << (8 + l);
}

enum class ReconstructionNorm { l1, l2 };

struct InpainterSpec {
  int patch_size = 64;
  int mask_size = 32;
  double gamma = 0.97;
  /// All channel widths are divided by this; 1 is the full schedule, 16 the
  /// desk-scale default.
  int channel_divisor = 16;
  double rec_loss_weight = 0.999;
  double adv_loss_weight = 0.001;
  ReconstructionNorm norm = ReconstructionNorm::l1;
  float fill_value = 0.0f;
  int batch_size = 64;
  nn::AdamConfig generator_optimizer{2e-4 * 5, 0.5, 0.999, 1e-8};
  nn::AdamConfig discriminator_optimizer{2e-4, 0.5, 0.999, 1e-8};

  MaskSpec mask_spec() const { return {patch_size, mask_size}; }

  int channels(Part part, int l) const { return channel_size(part, l) / channel_divisor; }

  void validate() const {
    (void)mask_spec();
    if (patch_size % 16 != 0)
      throw ValidationError("inpainter patch size must be a multiple of 16, got " + std::to_string(patch_size));
    if (channel_divisor < 1) throw ValidationError("channel divisor must be >= 1");
    for (Part p : {Part::encoder, Part::adversarial, Part::decoder})
      for (int l = 0; l < layer_count(p); ++l)
        if (channels(p, l) <= 0)
          throw ValidationError("channel divisor " + std::to_string(channel_divisor) +
                                " leaves a layer without channels");
    if (channels(Part::encoder, 4) != channels(Part::decoder, 0))
      throw ValidationError("encoder output channels must equal decoder input channels");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ValidationError("gamma must lie in (0,1]");
    if (rec_loss_weight < 0 || adv_loss_weight < 0 ||
        std::abs(rec_loss_weight + adv_loss_weight - 1.0) > 1e-9)
      throw ValidationError("reconstruction and adversarial loss weights must be non-negative and sum to 1");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Spatially discounted reconstruction loss

using DiscountMap = Grid<double>;

/// Ring index of mask pixel (x, y): 0 on the outermost masked ring.
inline int ring_index(int x, int y, int mask_size) {
  return std::min({x, y, mask_size - 1 - x, mask_size - 1 - y});
}

/// Per-pixel weight gamma^r over the M×M hole, r = ring index.
inline DiscountMap discount_map(const MaskSpec& spec, double gamma) {
  const int m = spec.mask_size();
  DiscountMap w(m, m);
  for (int y = 0; y < m; ++y)
    for (int x = 0; x < m; ++x) w(x, y) = std::pow(gamma, ring_index(x, y, m));
  return w;
}

/// Weighted mean reconstruction error over the hole: sum(w * |p - t|) / sum(w)
/// (squared error under the L2 norm).
inline double reconstruction_loss(const Image& predicted, const Image& target, const DiscountMap& weights,
                                  ReconstructionNorm norm = ReconstructionNorm::l1) {
  if (!predicted.same_shape(target) || !predicted.same_shape(weights))
    throw ValidationError("reconstruction_loss: shape mismatch");
  double num = 0.0, den = 0.0;
  for (int y = 0; y < predicted.height(); ++y)
    for (int x = 0; x < predicted.width(); ++x) {
      const double d = static_cast<double>(predicted(x, y)) - target(x, y);
      num += weights(x, y) * (norm == ReconstructionNorm::l1 ? std::abs(d) : d * d);
      den += weights(x, y);
    }
  return num / den;
}

// ---------------------------------------------------------------------------
// Inpainter interface

/// Anything that predicts the M×M hole content of a masked patch.
template <class T>
concept PatchInpainter = requires(const T& t, const MaskedPatch& m) {
  { t.predict_mask(m) } -> std::convertible_to<Image>;
};

/// Composition rule: the frame is copied from the input bit-exactly, only the
/// hole takes predicted values, and everything is clipped to [0,1].
inline Patch compose(const MaskedPatch& masked, const Image& hole) {
  const auto box = masked.spec.mask_box();
  if (hole.width() != box.w || hole.height() != box.h)
    throw ValidationError("inpainter returned a " + std::to_string(hole.width()) + "x" +
                          std::to_string(hole.height()) + " hole, expected " + std::to_string(box.w));
  Patch out = masked.patch;
  for (int y = 0; y < box.h; ++y)
    for (int x = 0; x < box.w; ++x) out.pixels(box.x + x, box.y + y) = clamp01(hole(x, y));
  return out;
}

template <PatchInpainter I>
Patch inpaint(const I& inpainter, const MaskedPatch& masked) {
  return compose(masked, inpainter.predict_mask(masked));
}

/// Baseline: fills the hole with the mean of the frame pixels.
struct MeanFillInpainter {
  Image predict_mask(const MaskedPatch& m) const {
    double sum = 0.0;
    int count = 0;
    for (int y = 0; y < m.spec.patch_size(); ++y)
      for (int x = 0; x < m.spec.patch_size(); ++x)
        if (!m.spec.in_mask(x, y)) {
          sum += m.patch.pixels(x, y);
          ++count;
        }
    return Image(m.spec.mask_size(), m.spec.mask_size(), static_cast<float>(sum / count));
  }
};

/// Oracle that knows the true hole content: looks the patch up by source id
/// in a set of reference images (e.g. nodule-free originals).
class ReferenceInpainter {
 public:
  ReferenceInpainter() = default;
  explicit ReferenceInpainter(std::map<std::string, Image> references) : refs_(std::move(references)) {}

  void add(const std::string& id, Image img) { refs_[id] = std::move(img); }

  /// Oracle over a patch set: each patch is its own reference, keyed by
  /// source id and origin.
  static ReferenceInpainter from_patches(const std::vector<Patch>& patches) {
    ReferenceInpainter r;
    r.by_origin_ = true;
    for (const auto& p : patches) r.refs_[key(p.source_id, p.origin)] = p.pixels;
    return r;
  }

  Image predict_mask(const MaskedPatch& m) const {
    const auto box = m.spec.mask_box();
    if (by_origin_) {
      auto it = refs_.find(key(m.patch.source_id, m.patch.origin));
      if (it == refs_.end()) throw ValidationError("reference inpainter has no patch for '" + m.patch.source_id + "'");
      return it->second.crop(box);
    }
    auto it = refs_.find(m.patch.source_id);
    if (it == refs_.end()) throw ValidationError("reference inpainter has no image '" + m.patch.source_id + "'");
    return it->second.crop(m.patch.origin.x + box.x, m.patch.origin.y + box.y, box.w, box.h);
  }

 private:
  static std::string key(const std::string& id, Point o) {
    return id + "@" + std::to_string(o.x) + "," + std::to_string(o.y);
  }
  std::map<std::string, Image> refs_;
  bool by_origin_ = false;
};

// ---------------------------------------------------------------------------
// Context encoder

struct TrainingLog {
  int epochs = 0;
  std::uint64_t seed = 0;
  std::vector<double> train_loss;  // weighted reconstruction loss, per epoch
  std::vector<double> val_loss;    // weighted reconstruction loss, per epoch
  std::vector<double> adv_loss;    // generator adversarial loss, per epoch
};

/// Encoder-decoder generator plus patch discriminator.
class ContextEncoder {
 public:
  explicit ContextEncoder(const InpainterSpec& spec) : spec_(spec) {
    spec_.validate();
    const int bottleneck_kernel = spec_.patch_size / 16;
    int in = 1;
    for (int l = 0; l < 4; ++l) {
      const int out = spec_.channels(Part::encoder, l);
      generator_.add<nn::Conv2d>("enc" + std::to_string(l), in, out, 4, 2, 1);
      generator_.add<nn::LeakyReLU>(0.2f);
      in = out;
    }
    generator_.add<nn::Conv2d>("enc4", in, spec_.channels(Part::encoder, 4), bottleneck_kernel, 1, 0);
    generator_.add<nn::LeakyReLU>(0.2f);
    const int first_kernel = spec_.mask_size / 8;
    for (int l = 0; l < 4; ++l) {
      const int cin = spec_.channels(Part::decoder, l);
      const int cout = l < 3 ? spec_.channels(Part::decoder, l + 1) : 1;
      if (l == 0)
        generator_.add<nn::ConvTranspose2d>("dec0", cin, cout, first_kernel, 1, 0);
      else
        generator_.add<nn::ConvTranspose2d>("dec" + std::to_string(l), cin, cout, 4, 2, 1);
      if (l < 3) generator_.add<nn::LeakyReLU>(0.2f);
    }

    in = 1;
    int side = spec_.mask_size;
    for (int l = 0; l < 4; ++l) {
      const int out = spec_.channels(Part::adversarial, l);
      discriminator_.add<nn::Conv2d>("adv" + std::to_string(l), in, out, 4, 2, 1);
      discriminator_.add<nn::LeakyReLU>(0.2f);
      in = out;
      side /= 2;
    }
    discriminator_.add<nn::Linear>("adv_out", in * side * side, 1);
  }

  const InpainterSpec& spec() const { return spec_; }

  void init(std::uint64_t seed) {
    Rng g = make_rng({seed, hash_string("generator_init")});
    generator_.init(g);
    Rng d = make_rng({seed, hash_string("discriminator_init")});
    discriminator_.init(d);
  }

  nn::Sequential& generator() { return generator_; }
  nn::Sequential& discriminator() { return discriminator_; }

  /// Network input: patch minus its frame mean. Returns the per-sample means.
  std::vector<float> make_input(const std::vector<const MaskedPatch*>& batch, nn::Tensor& x) const {
    const int p = spec_.patch_size;
    const MaskSpec ms = spec_.mask_spec();
    x = nn::Tensor(static_cast<int>(batch.size()), 1, p, p);
    std::vector<float> means(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& px = batch[i]->patch.pixels;
      if (px.width() != p || px.height() != p || !(batch[i]->spec == ms))
        throw ValidationError("masked patch geometry does not match the inpainter spec");
      double sum = 0.0;
      int count = 0;
      for (int y = 0; y < p; ++y)
        for (int xx = 0; xx < p; ++xx)
          if (!ms.in_mask(xx, y)) {
            sum += px(xx, y);
            ++count;
          }
      means[i] = static_cast<float>(sum / count);
      float* dst = x.sample(static_cast<int>(i));
      for (int k = 0; k < p * p; ++k) dst[k] = px.data()[k] - means[i];
    }
    return means;
  }

  /// Predicted hole content (unclipped) for a batch.
  std::vector<Image> predict_batch(const std::vector<const MaskedPatch*>& batch) const {
    std::lock_guard lock(mutex_);
    nn::Tensor x;
    const auto means = make_input(batch, x);
    const nn::Tensor y = generator_.forward(x, false);
    const int m = spec_.mask_size;
    std::vector<Image> out;
    out.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      Image hole(m, m);
      const float* src = y.sample(static_cast<int>(i));
      for (int k = 0; k < m * m; ++k) hole.data()[k] = src[k] + means[i];
      out.push_back(std::move(hole));
    }
    return out;
  }

  Image predict_mask(const MaskedPatch& masked) const { return predict_batch({&masked}).front(); }

 private:
  InpainterSpec spec_;
  mutable nn::Sequential generator_;
  mutable nn::Sequential discriminator_;
  mutable std::mutex mutex_;
};

/// Trained context encoder with its provenance.
struct InpainterModel {
  std::unique_ptr<ContextEncoder> network;
  TrainingLog log;

  const InpainterSpec& spec() const { return network->spec(); }
  Image predict_mask(const MaskedPatch& m) const { return network->predict_mask(m); }
};

struct TrainOptions {
  /// Called after each epoch with (epoch, train loss, val loss).
  std::function<void(int, double, double)> on_epoch;
};

namespace detail {

inline Image hole_of(const Patch& p, const MaskSpec& ms) { return p.pixels.crop(ms.mask_box()); }

inline double validation_loss(const ContextEncoder& net, const std::vector<MaskedPatch>& masked,
                              const std::vector<Image>& targets, const DiscountMap& w,
                              ReconstructionNorm norm) {
  if (masked.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  const std::size_t chunk = 128;
  for (std::size_t s = 0; s < masked.size(); s += chunk) {
    std::vector<const MaskedPatch*> batch;
    for (std::size_t i = s; i < std::min(masked.size(), s + chunk); ++i) batch.push_back(&masked[i]);
    const auto pred = net.predict_batch(batch);
    for (std::size_t i = 0; i < pred.size(); ++i) total += reconstruction_loss(pred[i], targets[s + i], w, norm);
  }
  return total / masked.size();
}

}  // namespace detail

/// Trains a context encoder on nodule-free patches. With epochs = 0 the model
/// keeps its seeded random initialization.
inline InpainterModel train_inpainter(const InpainterSpec& spec, const std::vector<Patch>& train_patches,
                                      const std::vector<Patch>& val_patches, int epochs,
                                      std::uint64_t seed, const TrainOptions& options = {}) {
  spec.validate();
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (epochs > 0 && train_patches.empty()) throw ValidationError("training set is empty");
  const MaskSpec ms = spec.mask_spec();
  for (const auto* set : {&train_patches, &val_patches})
    for (const auto& p : *set)
      if (p.pixels.width() != spec.patch_size || p.pixels.height() != spec.patch_size)
        throw ValidationError("patch from '" + p.source_id + "' does not match the inpainter patch size " +
                              std::to_string(spec.patch_size));

  InpainterModel model{std::make_unique<ContextEncoder>(spec), {}};
  model.network->init(seed);
  model.log.seed = seed;
  model.log.epochs = epochs;
  ContextEncoder& net = *model.network;

  const DiscountMap weights = discount_map(ms, spec.gamma);
  const double weight_sum = std::accumulate(weights.values().begin(), weights.values().end(), 0.0);
  const int m = spec.mask_size;

  auto mask_all = [&](const std::vector<Patch>& ps, std::vector<MaskedPatch>& masked, std::vector<Image>& holes) {
    masked.reserve(ps.size());
    holes.reserve(ps.size());
    for (const auto& p : ps) {
      masked.push_back(apply_center_mask(p, ms, spec.fill_value));
      holes.push_back(detail::hole_of(p, ms));
    }
  };
  std::vector<MaskedPatch> train_masked, val_masked;
  std::vector<Image> train_holes, val_holes;
  mask_all(train_patches, train_masked, train_holes);
  mask_all(val_patches, val_masked, val_holes);

  nn::Adam gen_opt(net.generator().parameters(), spec.generator_optimizer);
  nn::Adam disc_opt(net.discriminator().parameters(), spec.discriminator_optimizer);
  const bool adversarial = spec.adv_loss_weight > 0.0;

  std::vector<std::size_t> order(train_masked.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    Rng rng = make_rng({seed, static_cast<std::uint64_t>(epoch), hash_string("inpainter_shuffle")});
    shuffle(order.begin(), order.end(), rng);
    double epoch_rec = 0.0, epoch_adv = 0.0;
    for (std::size_t start = 0; start < order.size(); start += spec.batch_size) {
      const std::size_t end = std::min(order.size(), start + spec.batch_size);
      const int n = static_cast<int>(end - start);
      std::vector<const MaskedPatch*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&train_masked[order[i]]);

      nn::Tensor x;
      const auto means = net.make_input(batch, x);
      gen_opt.zero_grad();
      nn::Tensor fake = net.generator().forward(x, true);  // hole minus frame mean

      // Reconstruction gradient (weighted L1/L2, averaged over the batch).
      nn::Tensor grad(n, 1, m, m);
      double rec = 0.0;
      for (int i = 0; i < n; ++i) {
        const Image& target = train_holes[order[start + i]];
        const float* f = fake.sample(i);
        float* g = grad.sample(i);
        for (int k = 0; k < m * m; ++k) {
          const double d = f[k] + means[i] - target.data()[k];
          const double w = weights.data()[k] / weight_sum;
          if (spec.norm == ReconstructionNorm::l1) {
            rec += w * std::abs(d);
            g[k] = static_cast<float>(spec.rec_loss_weight * w * (d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n);
          } else {
            rec += w * d * d;
            g[k] = static_cast<float>(spec.rec_loss_weight * w * 2.0 * d / n);
          }
        }
      }
      rec /= n;
      if (!std::isfinite(rec))
        throw RuntimeFailure("inpainter training diverged at epoch " + std::to_string(epoch) +
                             " (non-finite reconstruction loss)");
      epoch_rec += rec * n;

      if (adversarial) {
        // Discriminator sees absolute intensities, centered at 0.5.
        nn::Tensor real(n, 1, m, m), fake_abs(n, 1, m, m);
        for (int i = 0; i < n; ++i) {
          const Image& target = train_holes[order[start + i]];
          for (int k = 0; k < m * m; ++k) {
            real.sample(i)[k] = target.data()[k] - 0.5f;
            fake_abs.sample(i)[k] = fake.sample(i)[k] + means[i] - 0.5f;
          }
        }
        auto logits = [](const nn::Tensor& t) { return t.data; };
        std::vector<float> ones(n, 1.0f), zeros(n, 0.0f), dl;

        disc_opt.zero_grad();
        nn::Tensor out_real = net.discriminator().forward(real, true);
        nn::bce_with_logits(logits(out_real), ones, &dl);
        nn::Tensor g_real(n, 1, 1, 1);
        g_real.data = dl;
        net.discriminator().backward(g_real);
        nn::Tensor out_fake = net.discriminator().forward(fake_abs, true);
        nn::bce_with_logits(logits(out_fake), zeros, &dl);
        nn::Tensor g_fake(n, 1, 1, 1);
        g_fake.data = dl;
        net.discriminator().backward(g_fake);
        disc_opt.step();

        // Generator adversarial term: push D(fake) towards "real".
        disc_opt.zero_grad();
        nn::Tensor out_gen = net.discriminator().forward(fake_abs, true);
        const double adv = nn::bce_with_logits(logits(out_gen), ones, &dl);
        nn::Tensor g_gen(n, 1, 1, 1);
        g_gen.data = dl;
        const nn::Tensor d_fake = net.discriminator().backward(g_gen);
        disc_opt.zero_grad();
        for (std::size_t k = 0; k < grad.size(); ++k)
          grad.data[k] += static_cast<float>(spec.adv_loss_weight) * d_fake.data[k];
        epoch_adv += adv * n;
      }

      net.generator().backward(grad);
      gen_opt.step();
    }
    const double train_loss = epoch_rec / order.size();
    const double val_loss = detail::validation_loss(net, val_masked, val_holes, weights, spec.norm);
    if (!std::isfinite(train_loss) || (!val_masked.empty() && !std::isfinite(val_loss)))
      throw RuntimeFailure("inpainter training diverged at epoch " + std::to_string(epoch) +
                           ": train loss " + std::to_string(train_loss) + ", val loss " +
                           std::to_string(val_loss));
    model.log.train_loss.push_back(train_loss);
    model.log.val_loss.push_back(val_loss);
    model.log.adv_loss.push_back(epoch_adv / order.size());
    if (options.on_epoch) options.on_epoch(epoch, train_loss, val_loss);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

/// Peak signal-to-noise ratio in dB; +infinity for identical inputs.
inline double psnr(const Image& a, const Image& b, double max_val = 1.0) {
  if (!a.same_shape(b)) throw ValidationError("psnr: shape mismatch");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.data()[i]) - b.data()[i];
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(max_val * max_val / (se / a.size()));
}

struct PsnrStats {
  std::string label;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
  int count = 0;
};

/// Mean and sample std. Any infinite entry makes the mean +inf; the std is
/// then 0 if every entry is infinite and NaN otherwise.
inline PsnrStats summarize(std::string label, const std::vector<double>& values) {
  PsnrStats s{std::move(label), 0.0, 0.0, static_cast<int>(values.size())};
  const auto n_inf = std::count_if(values.begin(), values.end(), [](double v) { return std::isinf(v); });
  if (n_inf > 0) {
    s.mean = std::numeric_limits<double>::infinity();
    s.stddev = n_inf == static_cast<long>(values.size()) ? 0.0 : std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = values.size() > 1 ? std::sqrt(ss / (values.size() - 1)) : 0.0;
  return s;
}

struct InpaintingReport {
  PsnrStats model;
  PsnrStats mean_fill;
  std::vector<double> model_psnr;      // per patch
  std::vector<double> mean_fill_psnr;  // per patch
};

/// Masks every test patch, inpaints it, and scores PSNR over the full patch
/// against the original. The mean-fill baseline is always co-reported.
template <PatchInpainter I>
InpaintingReport evaluate_inpainter(const I& inpainter, const std::vector<Patch>& test_patches,
                                    const MaskSpec& mask_spec, float fill_value = 0.0f,
                                    std::string model_label = "model") {
  if (test_patches.size() < 2) throw ValidationError("evaluation needs at least 2 test patches");
  InpaintingReport r;
  const MeanFillInpainter baseline;
  for (const auto& p : test_patches) {
    const MaskedPatch masked = apply_center_mask(p, mask_spec, fill_value);
    r.model_psnr.push_back(psnr(inpaint(inpainter, masked).pixels, p.pixels));
    r.mean_fill_psnr.push_back(psnr(inpaint(baseline, masked).pixels, p.pixels));
  }
  r.model = summarize(std::move(model_label), r.model_psnr);
  r.mean_fill = summarize("mean-fill", r.mean_fill_psnr);
  return r;
}

// ---------------------------------------------------------------------------
// Persistence

inline artifact::Json spec_to_json(const InpainterSpec& s) {
  artifact::Json j;
  j["patch_size"] = s.patch_size;
  j["mask_size"] = s.mask_size;
  j["gamma"] = s.gamma;
  j["channel_divisor"] = s.channel_divisor;
  j["rec_loss_weight"] = s.rec_loss_weight;
  j["adv_loss_weight"] = s.adv_loss_weight;
  j["norm"] = s.norm == ReconstructionNorm::l1 ? "l1" : "l2";
  j["fill_value"] = s.fill_value;
  j["batch_size"] = s.batch_size;
  j["generator_learning_rate"] = s.generator_optimizer.learning_rate;
  j["discriminator_learning_rate"] = s.discriminator_optimizer.learning_rate;
  artifact::Json ch;
  for (Part p : {Part::encoder, Part::decoder, Part::adversarial}) {
    std::vector<int> v;
    for (int l = 0; l < layer_count(p); ++l) v.push_back(s.channels(p, l));
    ch[to_string(p)] = v;
  }
  j["channels"] = ch;
  return j;
}

inline InpainterSpec spec_from_json(const artifact::Json& j) {
  InpainterSpec s;
  s.patch_size = j.at("patch_size").get<int>();
  s.mask_size = j.at("mask_size").get<int>();
  s.gamma = j.at("gamma").get<double>();
  s.channel_divisor = j.at("channel_divisor").get<int>();
  s.rec_loss_weight = j.at("rec_loss_weight").get<double>();
  s.adv_loss_weight = j.at("adv_loss_weight").get<double>();
  s.norm = j.at("norm").get<std::string>() == "l2" ? ReconstructionNorm::l2 : ReconstructionNorm::l1;
  s.fill_value = j.at("fill_value").get<float>();
  s.batch_size = j.at("batch_size").get<int>();
  s.generator_optimizer.learning_rate = j.at("generator_learning_rate").get<double>();
  s.discriminator_optimizer.learning_rate = j.at("discriminator_learning_rate").get<double>();
  s.validate();
  return s;
}

inline void save_model(const InpainterModel& model, const std::filesystem::path& dir) {
  artifact::Json body;
  body["spec"] = spec_to_json(model.spec());
  artifact::Json t;
  t["epochs"] = model.log.epochs;
  t["seed"] = model.log.seed;
  auto arr = [](const std::vector<double>& v) {
    artifact::Json a = artifact::Json::array();
    for (double x : v) a.push_back(artifact::number(x));
    return a;
  };
  t["train_loss"] = arr(model.log.train_loss);
  t["val_loss"] = arr(model.log.val_loss);
  t["adv_loss"] = arr(model.log.adv_loss);
  body["training"] = t;
  artifact::write_metadata(dir, "inpainter", body);
  auto params = model.network->generator().parameters();
  for (auto* p : model.network->discriminator().parameters()) params.push_back(p);
  nn::save_parameters(params, (dir / artifact::kParamsFile).string());
}

inline InpainterModel load_model(const std::filesystem::path& dir) {
  const auto meta = artifact::read_metadata(dir, "inpainter");
  InpainterModel model{std::make_unique<ContextEncoder>(spec_from_json(meta.at("spec"))), {}};
  const auto& t = meta.at("training");
  model.log.epochs = t.at("epochs").get<int>();
  model.log.seed = t.at("seed").get<std::uint64_t>();
  for (const auto& v : t.at("train_loss")) model.log.train_loss.push_back(artifact::to_double(v));
  for (const auto& v : t.at("val_loss")) model.log.val_loss.push_back(artifact::to_double(v));
  for (const auto& v : t.at("adv_loss")) model.log.adv_loss.push_back(artifact::to_double(v));
  auto params = model.network->generator().parameters();
  for (auto* p : model.network->discriminator().parameters()) params.push_back(p);
  nn::load_parameters(params, (dir / artifact::kParamsFile).string());
  return model;
}

}  // namespace lfa::inpainting
