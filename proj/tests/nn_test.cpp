#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <memory>

#include "lfa/nn.hpp"

using namespace lfa;
using namespace lfa::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, Rng& rng) {
  Tensor t(n, c, h, w);
  for (auto& v : t.data) v = static_cast<float>(normal(rng));
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.data[i]) * b.data[i];
  return s;
}

// Checks analytic input and parameter gradients of L = <f(x), r> against
// central differences.
void check_gradients(Layer& layer, Tensor x, const Tensor& r) {
  std::vector<Parameter*> params;
  layer.collect(params);
  for (auto* p : params) p->zero_grad();
  layer.forward(x, true);
  const Tensor gx = layer.backward(r);

  const float h = 1e-2f;
  auto loss = [&](const Tensor& in) { return dot(layer.forward(in, true), r); };
  for (std::size_t i = 0; i < x.size(); i += std::max<std::size_t>(1, x.size() / 40)) {
    Tensor xp = x, xm = x;
    xp.data[i] += h;
    xm.data[i] -= h;
    const double num = (loss(xp) - loss(xm)) / (2 * h);
    EXPECT_NEAR(gx.data[i], num, 1e-2 * std::max(1.0, std::abs(num))) << "input " << i;
  }
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); i += std::max<std::size_t>(1, p->value.size() / 40)) {
      const float keep = p->value[i];
      p->value[i] = keep + h;
      const double lp = loss(x);
      p->value[i] = keep - h;
      const double lm = loss(x);
      p->value[i] = keep;
      const double num = (lp - lm) / (2 * h);
      EXPECT_NEAR(p->grad[i], num, 1e-2 * std::max(1.0, std::abs(num))) << p->name << " " << i;
    }
  }
}

}  // namespace

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  Rng rng(1);
  Conv2d conv("c", 2, 3, 4, 2, 1);
  conv.init(rng);
  Tensor x = random_tensor(2, 2, 8, 8, rng);
  Tensor r = random_tensor(2, 3, 4, 4, rng);
  check_gradients(conv, x, r);
}

TEST(Conv2d, OutputShape) {
  Rng rng(2);
  Conv2d conv("c", 1, 4, 4, 1, 0);
  conv.init(rng);
  const Tensor y = conv.forward(Tensor(3, 1, 4, 4), false);
  EXPECT_EQ(y.n, 3);
  EXPECT_EQ(y.c, 4);
  EXPECT_EQ(y.h, 1);
  EXPECT_EQ(y.w, 1);
}

TEST(Conv2d, MatchesDirectConvolution) {
  Rng rng(3);
  Conv2d conv("c", 2, 2, 3, 1, 1);
  conv.init(rng);
  std::vector<Parameter*> ps;
  conv.collect(ps);
  const auto& w = ps[0]->value;
  const auto& b = ps[1]->value;
  Tensor x = random_tensor(1, 2, 5, 5, rng);
  const Tensor y = conv.forward(x, false);
  for (int o = 0; o < 2; ++o)
    for (int yy = 0; yy < 5; ++yy)
      for (int xx = 0; xx < 5; ++xx) {
        double s = b[o];
        for (int i = 0; i < 2; ++i)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              const int sy = yy + ky - 1, sx = xx + kx - 1;
              if (sy < 0 || sx < 0 || sy >= 5 || sx >= 5) continue;
              s += w[((o * 2 + i) * 3 + ky) * 3 + kx] * x.at(0, i, sy, sx);
            }
        EXPECT_NEAR(y.at(0, o, yy, xx), s, 1e-5);
      }
}

TEST(ConvTranspose2d, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  ConvTranspose2d deconv("d", 3, 2, 4, 2, 1);
  deconv.init(rng);
  Tensor x = random_tensor(2, 3, 4, 4, rng);
  Tensor r = random_tensor(2, 2, 8, 8, rng);
  check_gradients(deconv, x, r);
}

TEST(ConvTranspose2d, IsAdjointOfConv2d) {
  // With shared weights, <conv(x), y> == <x, deconv(y)> when biases are zero.
  Rng rng(5);
  Conv2d conv("c", 2, 3, 4, 2, 1);
  ConvTranspose2d deconv("d", 3, 2, 4, 2, 1);
  conv.init(rng);
  std::vector<Parameter*> pc, pd;
  conv.collect(pc);
  deconv.collect(pd);
  // conv weight [out=3][in=2][k][k]; deconv weight [in=3][out=2][k][k]: same layout.
  pd[0]->value = pc[0]->value;
  std::fill(pc[1]->value.begin(), pc[1]->value.end(), 0.0f);
  std::fill(pd[1]->value.begin(), pd[1]->value.end(), 0.0f);
  Tensor x = random_tensor(1, 2, 8, 8, rng);
  Tensor y = random_tensor(1, 3, 4, 4, rng);
  EXPECT_NEAR(dot(conv.forward(x, false), y), dot(x, deconv.forward(y, false)), 1e-3);
}

TEST(Linear, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  Linear lin("l", 12, 3);
  lin.init(rng);
  Tensor x = random_tensor(4, 3, 2, 2, rng);
  Tensor r = random_tensor(4, 3, 1, 1, rng);
  check_gradients(lin, x, r);
}

TEST(LeakyReLU, GradientsMatchFiniteDifferences) {
  Rng rng(7);
  LeakyReLU act(0.2f);
  Tensor x = random_tensor(2, 2, 3, 3, rng);
  Tensor r = random_tensor(2, 2, 3, 3, rng);
  check_gradients(act, x, r);
}

TEST(GlobalMaxPool, RoutesGradientToArgmax) {
  GlobalMaxPool pool;
  Tensor x(1, 2, 2, 2);
  x.data = {0, 3, 1, 2, -1, -2, -3, -0.5f};
  const Tensor y = pool.forward(x, true);
  EXPECT_EQ(y.data, (std::vector<float>{3, -0.5f}));
  Tensor g(1, 2, 1, 1);
  g.data = {1, 2};
  const Tensor gx = pool.backward(g);
  EXPECT_EQ(gx.data, (std::vector<float>{0, 1, 0, 0, 0, 0, 0, 2}));
}

TEST(Sequential, DeterministicInitAndForward) {
  auto build = [] {
    auto s = std::make_unique<Sequential>();
    s->add<Conv2d>("a", 1, 4, 4, 2, 1);
    s->add<LeakyReLU>(0.2f);
    s->add<Linear>("b", 4 * 4 * 4, 1);
    return s;
  };
  auto a = build(), b = build();
  Rng ra(9), rb(9);
  a->init(ra);
  b->init(rb);
  Rng rx(10);
  Tensor x = random_tensor(2, 1, 8, 8, rx);
  EXPECT_EQ(a->forward(x, false).data, b->forward(x, false).data);
  EXPECT_EQ(a->parameter_count(), 4u * 16 + 4 + 64 + 1);
}

TEST(Adam, MinimizesQuadratic) {
  Parameter p("p", 2);
  p.value = {3.0f, -2.0f};
  Adam opt({&p}, {0.05, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    for (int k = 0; k < 2; ++k) p.grad[k] = 2 * (p.value[k] - 1.0f);
    opt.step();
  }
  EXPECT_NEAR(p.value[0], 1.0f, 1e-3);
  EXPECT_NEAR(p.value[1], 1.0f, 1e-3);
}

TEST(BceWithLogits, ValueAndGradient) {
  std::vector<float> g;
  const double l = bce_with_logits({0.0f, 2.0f}, {1.0f, 0.0f}, &g);
  const double expect = (std::log(2.0) + std::log1p(std::exp(2.0))) / 2;
  EXPECT_NEAR(l, expect, 1e-9);
  EXPECT_NEAR(g[0], (0.5 - 1.0) / 2, 1e-7);
  EXPECT_NEAR(g[1], sigmoid(2.0) / 2, 1e-7);
  // Stable for large logits.
  EXPECT_TRUE(std::isfinite(bce_with_logits({1000.0f, -1000.0f}, {0.0f, 1.0f}, nullptr)));
}

TEST(ParameterIo, RoundTrip) {
  Parameter a("a", 3), b("b", 2);
  a.value = {1, 2, 3};
  b.value = {-1.5f, 4};
  const auto path = std::filesystem::temp_directory_path() / "lfa_nn_param_roundtrip.bin";
  save_parameters({&a, &b}, path.string());
  Parameter a2("a", 3), b2("b", 2);
  load_parameters({&a2, &b2}, path.string());
  EXPECT_EQ(a2.value, a.value);
  EXPECT_EQ(b2.value, b.value);
  Parameter wrong("a", 4);
  EXPECT_THROW(load_parameters({&wrong, &b2}, path.string()), Error);
  std::filesystem::remove(path);
}
