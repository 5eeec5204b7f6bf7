#pragma once

// Minimal CPU training stack: NCHW float tensors, im2col convolutions backed by
// Eigen GEMM, Adam. Everything runs single-threaded and is bit-reproducible for
// a fixed seed.

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "lfa/error.hpp"
#include "lfa/rng.hpp"

namespace lfa::nn {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;

struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  float* sample(int i) { return data.data() + i * sample_size(); }
  const float* sample(int i) const { return data.data() + i * sample_size(); }
  float& at(int i, int ch, int y, int x) {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  float at(int i, int ch, int y, int x) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
};

struct Parameter {
  std::string name;
  std::vector<float> value;
  std::vector<float> grad;

  Parameter(std::string n, std::size_t size) : name(std::move(n)), value(size, 0.0f), grad(size, 0.0f) {}
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, bool training) = 0;
  /// Gradient w.r.t. the input of the most recent forward call; accumulates
  /// parameter gradients.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect(std::vector<Parameter*>&) {}
  virtual void init(Rng&) {}
};

// ---------------------------------------------------------------------------
// im2col helpers

struct ConvGeometry {
  int channels, height, width;  // input
  int kernel, stride, pad;
  int out_h() const { return (height + 2 * pad - kernel) / stride + 1; }
  int out_w() const { return (width + 2 * pad - kernel) / stride + 1; }
  int rows() const { return channels * kernel * kernel; }
};

/// Writes the im2col matrix of one sample into columns
/// [col_offset, col_offset + out_h*out_w) of a row-major matrix with `ld` columns.
inline void im2col(const float* img, const ConvGeometry& g, float* cols, std::size_t ld,
                   std::size_t col_offset) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        float* dst = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ld + col_offset;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          float* drow = dst + oy * ow;
          if (iy < 0 || iy >= g.height) {
            std::fill_n(drow, ow, 0.0f);
            continue;
          }
          const float* srow = img + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            drow[ox] = (ix >= 0 && ix < g.width) ? srow[ix] : 0.0f;
          }
        }
      }
}

/// Adjoint of im2col: scatters-adds columns back into an image.
inline void col2im(const float* cols, const ConvGeometry& g, float* img, std::size_t ld,
                   std::size_t col_offset) {
  const int oh = g.out_h(), ow = g.out_w();
  for (int c = 0; c < g.channels; ++c)
    for (int ky = 0; ky < g.kernel; ++ky)
      for (int kx = 0; kx < g.kernel; ++kx) {
        const float* src = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ld + col_offset;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.height) continue;
          const float* srow = src + oy * ow;
          float* drow = img + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.width) drow[ix] += srow[ox];
          }
        }
      }
}

/// NCHW tensor -> [C, N*H*W] row-major matrix.
inline MatR channels_major(const Tensor& t) {
  MatR m(t.c, static_cast<Eigen::Index>(t.n) * t.h * t.w);
  const std::size_t hw = static_cast<std::size_t>(t.h) * t.w;
  for (int i = 0; i < t.n; ++i)
    for (int ch = 0; ch < t.c; ++ch)
      std::memcpy(m.data() + ch * m.cols() + i * hw, t.sample(i) + ch * hw, hw * sizeof(float));
  return m;
}

inline Tensor from_channels_major(const MatR& m, int n, int h, int w) {
  Tensor t(n, static_cast<int>(m.rows()), h, w);
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < t.c; ++ch)
      std::memcpy(t.sample(i) + ch * hw, m.data() + ch * m.cols() + i * hw, hw * sizeof(float));
  return t;
}

inline void init_normal(std::vector<float>& v, double stddev, Rng& rng) {
  for (auto& x : v) x = static_cast<float>(stddev * normal(rng));
}

// ---------------------------------------------------------------------------
// Layers

class Conv2d : public Layer {
 public:
  Conv2d(std::string name, int in, int out, int kernel, int stride, int pad)
      : in_(in), out_(out), k_(kernel), s_(stride), p_(pad),
        weight_(name + ".weight", static_cast<std::size_t>(out) * in * kernel * kernel),
        bias_(name + ".bias", out) {}

  void init(Rng& rng) override {
    init_normal(weight_.value, std::sqrt(2.0 / (in_ * k_ * k_)), rng);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
  }

  Tensor forward(const Tensor& x, bool) override {
    if (x.c != in_) throw ValidationError("Conv2d: input has " + std::to_string(x.c) + " channels, expected " + std::to_string(in_));
    geom_ = {x.c, x.h, x.w, k_, s_, p_};
    n_ = x.n;
    const int oh = geom_.out_h(), ow = geom_.out_w();
    const std::size_t per = static_cast<std::size_t>(oh) * ow;
    cols_.resize(geom_.rows(), static_cast<Eigen::Index>(n_ * per));
    for (int i = 0; i < n_; ++i) im2col(x.sample(i), geom_, cols_.data(), cols_.cols(), i * per);
    MatR y = CMapR(weight_.value.data(), out_, geom_.rows()) * cols_;
    for (int o = 0; o < out_; ++o) y.row(o).array() += bias_.value[o];
    return from_channels_major(y, n_, oh, ow);
  }

  Tensor backward(const Tensor& g) override {
    const MatR gm = channels_major(g);
    MapR(weight_.grad.data(), out_, geom_.rows()).noalias() += gm * cols_.transpose();
    for (int o = 0; o < out_; ++o) bias_.grad[o] += gm.row(o).sum();
    const MatR dcols = CMapR(weight_.value.data(), out_, geom_.rows()).transpose() * gm;
    Tensor dx(n_, geom_.channels, geom_.height, geom_.width);
    const std::size_t per = static_cast<std::size_t>(geom_.out_h()) * geom_.out_w();
    for (int i = 0; i < n_; ++i) col2im(dcols.data(), geom_, dx.sample(i), dcols.cols(), i * per);
    return dx;
  }

  void collect(std::vector<Parameter*>& ps) override {
    ps.push_back(&weight_);
    ps.push_back(&bias_);
  }

 private:
  int in_, out_, k_, s_, p_;
  Parameter weight_, bias_;
  ConvGeometry geom_{};
  int n_ = 0;
  MatR cols_;
};

/// Fractionally-strided convolution; output size (H-1)*stride - 2*pad + kernel.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(std::string name, int in, int out, int kernel, int stride, int pad)
      : in_(in), out_(out), k_(kernel), s_(stride), p_(pad),
        weight_(name + ".weight", static_cast<std::size_t>(in) * out * kernel * kernel),
        bias_(name + ".bias", out) {}

  void init(Rng& rng) override {
    const double fan_in = in_ * std::max(1.0, static_cast<double>(k_ * k_) / (s_ * s_));
    init_normal(weight_.value, std::sqrt(2.0 / fan_in), rng);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
  }

  Tensor forward(const Tensor& x, bool) override {
    if (x.c != in_) throw ValidationError("ConvTranspose2d: input has " + std::to_string(x.c) + " channels, expected " + std::to_string(in_));
    n_ = x.n;
    in_h_ = x.h;
    in_w_ = x.w;
    const int oh = (x.h - 1) * s_ - 2 * p_ + k_;
    const int ow = (x.w - 1) * s_ - 2 * p_ + k_;
    geom_ = {out_, oh, ow, k_, s_, p_};  // the adjoint convolution maps output -> input
    xm_ = channels_major(x);
    const MatR cols = CMapR(weight_.value.data(), in_, geom_.rows()).transpose() * xm_;
    Tensor y(n_, out_, oh, ow);
    const std::size_t per = static_cast<std::size_t>(x.h) * x.w;
    for (int i = 0; i < n_; ++i) col2im(cols.data(), geom_, y.sample(i), cols.cols(), i * per);
    const std::size_t hw = static_cast<std::size_t>(oh) * ow;
    for (int i = 0; i < n_; ++i)
      for (int o = 0; o < out_; ++o) {
        float* p = y.sample(i) + o * hw;
        for (std::size_t j = 0; j < hw; ++j) p[j] += bias_.value[o];
      }
    return y;
  }

  Tensor backward(const Tensor& g) override {
    const std::size_t per = static_cast<std::size_t>(in_h_) * in_w_;
    MatR dcols(geom_.rows(), static_cast<Eigen::Index>(n_ * per));
    for (int i = 0; i < n_; ++i) im2col(g.sample(i), geom_, dcols.data(), dcols.cols(), i * per);
    MapR(weight_.grad.data(), in_, geom_.rows()).noalias() += xm_ * dcols.transpose();
    const std::size_t hw = static_cast<std::size_t>(g.h) * g.w;
    for (int i = 0; i < n_; ++i)
      for (int o = 0; o < out_; ++o) {
        const float* p = g.sample(i) + o * hw;
        double s = 0.0;
        for (std::size_t j = 0; j < hw; ++j) s += p[j];
        bias_.grad[o] += static_cast<float>(s);
      }
    const MatR dx = CMapR(weight_.value.data(), in_, geom_.rows()) * dcols;
    return from_channels_major(dx, n_, in_h_, in_w_);
  }

  void collect(std::vector<Parameter*>& ps) override {
    ps.push_back(&weight_);
    ps.push_back(&bias_);
  }

 private:
  int in_, out_, k_, s_, p_;
  Parameter weight_, bias_;
  ConvGeometry geom_{};
  int n_ = 0, in_h_ = 0, in_w_ = 0;
  MatR xm_;
};

/// Fully connected layer over flattened samples; output shape (N, out, 1, 1).
class Linear : public Layer {
 public:
  Linear(std::string name, int in, int out)
      : in_(in), out_(out), weight_(name + ".weight", static_cast<std::size_t>(in) * out),
        bias_(name + ".bias", out) {}

  void init(Rng& rng) override {
    init_normal(weight_.value, std::sqrt(1.0 / in_), rng);
    std::fill(bias_.value.begin(), bias_.value.end(), 0.0f);
  }

  Tensor forward(const Tensor& x, bool) override {
    if (static_cast<int>(x.sample_size()) != in_) throw ValidationError("Linear: input size mismatch");
    x_ = x;
    Tensor y(x.n, out_, 1, 1);
    MapR(y.data.data(), x.n, out_).noalias() =
        CMapR(x.data.data(), x.n, in_) * CMapR(weight_.value.data(), out_, in_).transpose();
    for (int i = 0; i < x.n; ++i)
      for (int o = 0; o < out_; ++o) y.data[i * out_ + o] += bias_.value[o];
    return y;
  }

  Tensor backward(const Tensor& g) override {
    const CMapR gm(g.data.data(), g.n, out_);
    MapR(weight_.grad.data(), out_, in_).noalias() += gm.transpose() * CMapR(x_.data.data(), x_.n, in_);
    for (int o = 0; o < out_; ++o) bias_.grad[o] += gm.col(o).sum();
    Tensor dx(x_.n, x_.c, x_.h, x_.w);
    MapR(dx.data.data(), x_.n, in_).noalias() = gm * CMapR(weight_.value.data(), out_, in_);
    return dx;
  }

  void collect(std::vector<Parameter*>& ps) override {
    ps.push_back(&weight_);
    ps.push_back(&bias_);
  }

 private:
  int in_, out_;
  Parameter weight_, bias_;
  Tensor x_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(float slope = 0.2f) : slope_(slope) {}
  Tensor forward(const Tensor& x, bool) override {
    x_ = x;
    Tensor y = x;
    for (auto& v : y.data) v = v > 0 ? v : slope_ * v;
    return y;
  }
  Tensor backward(const Tensor& g) override {
    Tensor dx = g;
    for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= x_.data[i] > 0 ? 1.0f : slope_;
    return dx;
  }

 private:
  float slope_;
  Tensor x_;
};

/// (N, C, H, W) -> (N, C, 1, 1) maximum over each channel.
class GlobalMaxPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool) override {
    shape_ = {x.n, x.c, x.h, x.w};
    Tensor y(x.n, x.c, 1, 1);
    argmax_.assign(static_cast<std::size_t>(x.n) * x.c, 0);
    const std::size_t hw = static_cast<std::size_t>(x.h) * x.w;
    for (int i = 0; i < x.n; ++i)
      for (int ch = 0; ch < x.c; ++ch) {
        const float* p = x.sample(i) + ch * hw;
        const auto best = static_cast<std::size_t>(std::max_element(p, p + hw) - p);
        argmax_[i * x.c + ch] = best;
        y.data[i * x.c + ch] = p[best];
      }
    return y;
  }
  Tensor backward(const Tensor& g) override {
    Tensor dx(shape_[0], shape_[1], shape_[2], shape_[3]);
    const std::size_t hw = static_cast<std::size_t>(shape_[2]) * shape_[3];
    for (int i = 0; i < shape_[0]; ++i)
      for (int ch = 0; ch < shape_[1]; ++ch)
        dx.sample(i)[ch * hw + argmax_[i * shape_[1] + ch]] = g.data[i * shape_[1] + ch];
    return dx;
  }

 private:
  std::array<int, 4> shape_{};
  std::vector<std::size_t> argmax_;
};

class Sequential {
 public:
  template <class L, class... Args>
  L& add(Args&&... args) {
    auto p = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *p;
    layers_.push_back(std::move(p));
    return ref;
  }

  Tensor forward(Tensor x, bool training) {
    for (auto& l : layers_) x = l->forward(x, training);
    return x;
  }

  Tensor backward(Tensor g) {
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> ps;
    for (auto& l : layers_) l->collect(ps);
    return ps;
  }

  void init(Rng& rng) {
    for (auto& l : layers_) l->init(rng);
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (auto* p : params_) {
      m_.emplace_back(p->value.size(), 0.0f);
      v_.emplace_back(p->value.size(), 0.0f);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    const float lr = static_cast<float>(cfg_.learning_rate * std::sqrt(bc2) / bc1);
    const float b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const float eps = static_cast<float>(cfg_.epsilon);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = *params_[k];
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const float g = p.grad[i];
        m[i] = b1 * m[i] + (1 - b1) * g;
        v[i] = b2 * v[i] + (1 - b2) * g * g;
        p.value[i] -= lr * m[i] / (std::sqrt(v[i]) + eps);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }

 private:
  std::vector<Parameter*> params_;
  AdamConfig cfg_;
  std::vector<std::vector<float>> m_, v_;
  long long t_ = 0;
};

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy on logits; writes d(loss)/d(logit) into `grad`.
inline double bce_with_logits(const std::vector<float>& logits, const std::vector<float>& targets,
                              std::vector<float>* grad) {
  const std::size_t n = logits.size();
  double loss = 0.0;
  if (grad) grad->assign(n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits[i], t = targets[i];
    loss += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    if (grad) (*grad)[i] = static_cast<float>((1.0 / (1.0 + std::exp(-z)) - t) / n);
  }
  return loss / n;
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// Parameter blob: "LFAPARAM" magic, uint32 version, uint32 count, then per
// tensor uint32 name length, name bytes, uint64 element count, float32 values.
// Little-endian.

inline void save_parameters(const std::vector<Parameter*>& ps, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write parameter blob '" + path + "'");
  out.write("LFAPARAM", 8);
  const std::uint32_t version = 1, count = static_cast<std::uint32_t>(ps.size());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  for (const auto* p : ps) {
    const auto len = static_cast<std::uint32_t>(p->name.size());
    const auto n = static_cast<std::uint64_t>(p->value.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(p->name.data(), len);
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(n * sizeof(float)));
  }
  if (!out) throw RuntimeFailure("failed writing parameter blob '" + path + "'");
}

inline void load_parameters(const std::vector<Parameter*>& ps, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open parameter blob '" + path + "'");
  char magic[8];
  std::uint32_t version = 0, count = 0;
  in.read(magic, 8);
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  if (!in || std::memcmp(magic, "LFAPARAM", 8) != 0 || version != 1)
    throw IngestionError("'" + path + "' is not a version-1 parameter blob");
  if (count != ps.size())
    throw ValidationError("parameter blob '" + path + "' holds " + std::to_string(count) +
                          " tensors, model expects " + std::to_string(ps.size()));
  for (auto* p : ps) {
    std::uint32_t len = 0;
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string name(len, '\0');
    in.read(name.data(), len);
    in.read(reinterpret_cast<char*>(&n), 8);
    if (!in || name != p->name || n != p->value.size())
      throw ValidationError("parameter blob '" + path + "' does not match tensor '" + p->name + "'");
    in.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(n * sizeof(float)));
  }
  if (!in) throw IngestionError("truncated parameter blob '" + path + "'");
}

}  // namespace lfa::nn
