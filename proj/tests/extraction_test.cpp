#include <gtest/gtest.h>

#include <cmath>

#include "lfa/bilateral.hpp"
#include "lfa/extraction.hpp"
#include "lfa/phantom.hpp"
#include "test_util.hpp"

using namespace lfa;
using namespace lfa::extraction;

namespace {

// Direct double loop over the window, neighbours outside the grid skipped.
Image reference_bilateral(const Image& in, int window, double ss, double si) {
  const int r = window / 2;
  Image out(in.width(), in.height());
  for (int y = 0; y < in.height(); ++y)
    for (int x = 0; x < in.width(); ++x) {
      double num = 0, den = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          if (!in.contains(x + dx, y + dy)) continue;
          const double v = in(x + dx, y + dy);
          const double d = v - in(x, y);
          const double w = std::exp(-(dx * dx + dy * dy) / (2 * ss * ss)) * std::exp(-d * d / (2 * si * si));
          num += w * v;
          den += w;
        }
      out(x, y) = static_cast<float>(num / den);
    }
  return out;
}

Image gaussian_blur(const Image& in, double ss) { return reference_bilateral(in, 3, ss, 1e9); }

int steepest_column(const Image& img, int y) {
  int best = 0;
  float g = -1;
  for (int x = 0; x + 1 < img.width(); ++x)
    if (std::abs(img(x + 1, y) - img(x, y)) > g) {
      g = std::abs(img(x + 1, y) - img(x, y));
      best = x;
    }
  return best;
}

struct Fixture {
  std::vector<phantom::PhantomSample> samples;
  inpainting::ReferenceInpainter clean;
};

Fixture phantom_fixture(int n, std::uint64_t seed) {
  Fixture f;
  f.samples = phantom::generate_samples(n, 1.0, {}, seed);
  for (const auto& s : f.samples) f.clean.add(s.record.image_id, s.clean);
  return f;
}

}  // namespace

TEST(Bilateral, MatchesDoubleLoopReference) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Image in = test::random_image(16, 16, rng);
    const BilateralParams p{3, uniform_real(rng, 0.5, 2.0), uniform_real(rng, 0.05, 0.5)};
    const Image got = bilateral_filter(in, p);
    const Image want = reference_bilateral(in, p.window, p.sigma_space, p.sigma_intensity);
    for (std::size_t i = 0; i < in.size(); ++i) ASSERT_NEAR(got.data()[i], want.data()[i], 1e-6);
  }
}

TEST(Bilateral, WiderWindowAlsoMatches) {
  Rng rng(2);
  const Image in = test::random_image(12, 9, rng);
  const Image got = bilateral_filter(in, {5, 1.5, 0.2});
  const Image want = reference_bilateral(in, 5, 1.5, 0.2);
  for (std::size_t i = 0; i < in.size(); ++i) ASSERT_NEAR(got.data()[i], want.data()[i], 1e-6);
}

TEST(Bilateral, ConstantGridUnchanged) {
  const Image in(10, 10, 0.37f);
  const Image out = bilateral_filter(in);
  for (float v : out.values()) EXPECT_NEAR(v, 0.37f, 1e-7);
}

TEST(Bilateral, ImpulseIsReducedAndMassRoughlyKept) {
  Image in(9, 9);
  in(4, 4) = 1.0f;
  const BilateralParams p{3, 1.0, 1.0};
  const Image out = bilateral_filter(in, p);
  EXPECT_LT(out(4, 4), 1.0f);
  EXPECT_GT(out(4, 4), 0.0f);
  double mass = 0;
  for (int y = 3; y <= 5; ++y)
    for (int x = 3; x <= 5; ++x) mass += out(x, y);
  EXPECT_NEAR(mass, 1.0, 0.35);
}

TEST(Bilateral, StepEdgeStaysPut) {
  Image in(16, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 8; x < 16; ++x) in(x, y) = 1.0f;
  const Image bil = bilateral_filter(in);
  const Image blur = gaussian_blur(in, 1.0);
  EXPECT_EQ(steepest_column(bil, 2), 7);
  // The edge contrast survives the bilateral filter but not the plain blur.
  EXPECT_GT(bil(8, 2) - bil(7, 2), 0.99f);
  EXPECT_LT(blur(8, 2) - blur(7, 2), 0.6f);
}

TEST(Bilateral, RejectsBadParameters) {
  EXPECT_THROW(bilateral_filter(Image(4, 4), {4, 1, 1}), ValidationError);
  EXPECT_THROW(bilateral_filter(Image(4, 4), {3, 0, 1}), ValidationError);
  EXPECT_THROW(bilateral_filter(Image(4, 4), {3, 1, -1}), ValidationError);
}

TEST(SubtractClamp, Examples) {
  Rng rng(3);
  const Image a = test::random_image(8, 8, rng);
  const Image same = subtract_clamp(a, a);
  for (float v : same.values()) EXPECT_EQ(v, 0.0f);
  Image brighter = a;
  for (auto& v : brighter.values()) v += 0.2f;
  const Image clamped = subtract_clamp(a, brighter);
  for (float v : clamped.values()) EXPECT_EQ(v, 0.0f);
  const Image b = test::random_image(8, 8, rng);
  const Image r = subtract_clamp(a, b);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_EQ(r.data()[i], std::max(0.0f, a.data()[i] - b.data()[i]));
  EXPECT_THROW(subtract_clamp(a, Image(4, 4)), ValidationError);
}

TEST(Extract, PerfectOracleRecoversBlob) {
  auto f = phantom_fixture(30, 4);
  ExtractionParams params;
  params.filter.reset();
  for (const auto& s : f.samples) {
    const auto& r = s.record;
    const auto ex = extract_nodule(f.clean, r, r.bboxes[0], params);
    const auto& o = ex.asset.source_origin;
    for (int y = 0; y < 64; ++y)
      for (int x = 0; x < 64; ++x) {
        const double truth = r.pixels(o.x + x, o.y + y) - s.clean(o.x + x, o.y + y);
        ASSERT_NEAR(ex.asset.residual(x, y), truth, std::ldexp(1.0, -10));
        ASSERT_GE(ex.asset.residual(x, y), 0.0f);
      }
    const BoundingBox in_patch{r.bboxes[0].x - o.x, r.bboxes[0].y - o.y, r.bboxes[0].w, r.bboxes[0].h};
    EXPECT_GE(iou(ex.asset.support_bbox, in_patch), 0.8);
  }
}

TEST(Extract, FilteredSupportStaysNonNegative) {
  auto f = phantom_fixture(10, 5);
  for (const auto& s : f.samples) {
    const auto ex = extract_nodule(f.clean, s.record, s.record.bboxes[0]);
    for (float v : ex.asset.residual.values()) ASSERT_GE(v, 0.0f);
    EXPECT_FALSE(ex.asset.support_bbox.empty());
  }
}

TEST(Extract, GeometryErrors) {
  auto f = phantom_fixture(1, 6);
  const auto& r = f.samples[0].record;
  try {
    extract_nodule(f.clean, r, BoundingBox{40, 40, 40, 40});
    FAIL();
  } catch (const GeometryError& e) {
    EXPECT_NE(std::string(e.what()).find("nodule too large"), std::string::npos);
  }
  EXPECT_THROW(extract_nodule(f.clean, r, BoundingBox{0, 0, 0, 0}), GeometryError);
  EXPECT_THROW(extract_nodule(f.clean, r, BoundingBox{0, 0, 4, 4}), GeometryError);
}

TEST(Extract, NoResidualError) {
  auto f = phantom_fixture(1, 7);
  ImageRecord r = f.samples[0].record;
  r.pixels = f.samples[0].clean;
  try {
    extract_nodule(f.clean, r, BoundingBox{50, 50, 8, 8});
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("no residual"), std::string::npos);
  }
}

TEST(Gate, StrictThreshold) {
  EXPECT_TRUE(gate_accepts(0.3));
  EXPECT_FALSE(gate_accepts(0.5));
  EXPECT_FALSE(gate_accepts(0.7));
  auto f = phantom_fixture(1, 8);
  const auto& r = f.samples[0].record;
  const auto ex = extract_nodule(f.clean, r, r.bboxes[0]);
  for (double score : {0.3, 0.5, 0.7}) {
    const auto g = gate_asset(ConstantScorer{score}, r, ex.inpainted);
    EXPECT_EQ(g.accept, score < 0.5);
    EXPECT_EQ(g.score, score);
  }
}

TEST(Gate, MonotoneInThreshold) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double s = uniform01(rng), lo = uniform01(rng), hi = std::max(lo, uniform01(rng));
    if (!gate_accepts(s, hi)) {
      ASSERT_FALSE(gate_accepts(s, lo));
    }
  }
}

TEST(Bank, ConstantScorersAndCountConservation) {
  auto f = phantom_fixture(12, 10);
  std::vector<ImageRecord> recs;
  for (const auto& s : f.samples) recs.push_back(s.record);
  recs[3].bboxes.push_back({0, 0, 40, 40});  // too large
  const auto none = build_nodule_bank(f.clean, ConstantScorer{0.9}, recs, {});
  EXPECT_EQ(none.candidates, 13);
  EXPECT_EQ(none.accepted, 0);
  EXPECT_EQ(none.rejected_by_gate, 12);
  EXPECT_EQ(none.rejected_by_geometry, 1);
  const auto all = build_nodule_bank(f.clean, ConstantScorer{0.0}, recs, {});
  EXPECT_EQ(all.accepted, 12);
  EXPECT_EQ(all.accepted + all.rejected_by_gate + all.rejected_by_geometry, all.candidates);
  for (std::size_t i = 1; i < all.assets.size(); ++i) EXPECT_LT(all.assets[i - 1].asset_id, all.assets[i].asset_id);
}

TEST(Bank, WrittenBankLoadsBack) {
  test::TempDir dir("bank");
  auto f = phantom_fixture(5, 11);
  std::vector<ImageRecord> recs;
  for (const auto& s : f.samples) recs.push_back(s.record);
  BankOptions opt;
  opt.config_hash = "abc";
  const auto s = build_nodule_bank(f.clean, ConstantScorer{0.1}, recs, opt, dir.path());
  EXPECT_TRUE(std::filesystem::exists(dir / "bank_summary.json"));
  const auto bank = load_bank(dir.path());
  ASSERT_EQ(bank.size(), s.assets.size());
  for (std::size_t i = 0; i < bank.size(); ++i) {
    EXPECT_EQ(bank[i].asset_id, s.assets[i].asset_id);
    EXPECT_EQ(bank[i].support_bbox, s.assets[i].support_bbox);
    EXPECT_DOUBLE_EQ(bank[i].gate_score, 0.1);
    for (std::size_t k = 0; k < bank[i].residual.size(); ++k)
      ASSERT_NEAR(bank[i].residual.data()[k], s.assets[i].residual.data()[k], 1.0 / 65535);
  }
  EXPECT_THROW(load_bank(dir / "missing"), IngestionError);
}

TEST(Bank, Deterministic) {
  auto f = phantom_fixture(6, 12);
  std::vector<ImageRecord> recs;
  for (const auto& s : f.samples) recs.push_back(s.record);
  const auto a = build_nodule_bank(f.clean, ConstantScorer{0.2}, recs, {});
  const auto b = build_nodule_bank(f.clean, ConstantScorer{0.2}, recs, {});
  ASSERT_EQ(a.assets.size(), b.assets.size());
  for (std::size_t i = 0; i < a.assets.size(); ++i) EXPECT_EQ(a.assets[i].residual, b.assets[i].residual);
}
