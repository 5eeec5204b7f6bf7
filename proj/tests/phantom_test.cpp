#include <gtest/gtest.h>

#include <cmath>

#include "lfa/dataset.hpp"
#include "lfa/phantom.hpp"
#include "test_util.hpp"

using namespace lfa;
using namespace lfa::phantom;

TEST(Phantom, RecordIsValidWithLungMask) {
  const auto ph = generate_phantom({}, 1);
  EXPECT_NO_THROW(validate(ph.record, 128));
  ASSERT_TRUE(ph.record.lung_mask.has_value());
  int lung = 0;
  for (auto v : ph.lung_mask.values()) lung += v;
  EXPECT_GT(lung, 128 * 128 / 8);
  EXPECT_LT(lung, 128 * 128 / 2);
}

TEST(Phantom, BlobBoxMatchesAnalyticDisc) {
  const auto ph = generate_phantom({}, 2);
  for (double radius : {3.0, 4.6, 8.0}) {
    const Point c{60, 64};
    const auto imp = implant_blob_at(ph.record, c, 0.3, radius);
    const int r = support_radius(radius);
    const BoundingBox disc{c.x - r, c.y - r, 2 * r + 1, 2 * r + 1};
    EXPECT_DOUBLE_EQ(iou(imp.bbox, disc), 1.0) << radius;
    EXPECT_EQ(imp.record.nodule_label, 1);
    EXPECT_NEAR(imp.blob(c.x, c.y), 0.3, 1e-6);
    EXPECT_EQ(imp.blob(c.x + r + 1, c.y), 0.0f);
  }
}

TEST(Phantom, DegenerateBlobIsRejected) {
  const auto ph = generate_phantom({}, 3);
  EXPECT_THROW(implant_blob_at(ph.record, {10, 10}, 0.0, 4), ValidationError);
  EXPECT_THROW(implant_blob_at(ph.record, {10, 10}, 0.2, 0.0), ValidationError);
  EXPECT_THROW(implant_blob(ph.record, Mask(128, 128), 0.2, 4, 0), ValidationError);
}

TEST(Phantom, ImplantedBlobSitsInsideLung) {
  const auto ph = generate_phantom({}, 4);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto imp = implant_blob(ph.record, ph.lung_mask, 0.2, 6, s);
    EXPECT_TRUE(ph.lung_mask(imp.center.x, imp.center.y));
    EXPECT_TRUE(imp.bbox.fits_in(128, 128));
  }
}

TEST(Phantom, SamplesHaveExpectedCountsAndIds) {
  const auto samples = generate_samples(40, 0.25, {}, 5);
  ASSERT_EQ(samples.size(), 40u);
  int pos = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& r = samples[i].record;
    EXPECT_EQ(r.image_id, phantom_image_id(static_cast<int>(i)));
    EXPECT_EQ(r.patient_id, "pat_" + std::to_string(i / 4));
    EXPECT_NO_THROW(validate(r, 128));
    if (r.nodule_label) {
      ++pos;
      EXPECT_EQ(r.bboxes.size(), 1u);
      EXPECT_NE(r.pixels, samples[i].clean);
    } else {
      EXPECT_EQ(r.pixels, samples[i].clean);
    }
  }
  EXPECT_EQ(pos, 10);
}

TEST(Phantom, DeterministicPerSeed) {
  const auto a = generate_samples(6, 0.5, {}, 11);
  const auto b = generate_samples(6, 0.5, {}, 11);
  const auto c = generate_samples(6, 0.5, {}, 12);
  for (int i = 0; i < 6; ++i) EXPECT_EQ(a[i].record.pixels, b[i].record.pixels);
  EXPECT_NE(a[0].record.pixels, c[0].record.pixels);
}

TEST(Phantom, WrittenDatasetLoadsBack) {
  test::TempDir dir("phantom_io");
  const auto samples = generate_phantom_dataset(8, 0.5, {}, 6, dir.path());
  const auto recs = load_dataset(dir / "images", dir / "labels.csv", dir / "bboxes.csv", dir / "masks");
  ASSERT_EQ(recs.size(), 8u);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(recs[i].bboxes, samples[i].record.bboxes);
    EXPECT_EQ(recs[i].nodule_label, samples[i].record.nodule_label);
    EXPECT_EQ(*recs[i].lung_mask, *samples[i].record.lung_mask);
  }
}

TEST(Phantom, SpecValidation) {
  PhantomSpec s;
  s.min_amplitude = 0.5;
  s.max_amplitude = 0.1;
  EXPECT_THROW(s.validate(), ValidationError);
  EXPECT_THROW(generate_samples(0, 0.1, {}, 0), ValidationError);
  EXPECT_THROW(generate_samples(4, 1.5, {}, 0), ValidationError);
}
