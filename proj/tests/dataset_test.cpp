#include <gtest/gtest.h>

#include <fstream>
#include <set>

#include "lfa/csv.hpp"
#include "lfa/dataset.hpp"
#include "lfa/png_io.hpp"
#include "test_util.hpp"

using namespace lfa;
using lfa::test::TempDir;

namespace {

ImageRecord flat_record(const std::string& id, const std::string& patient, int size, float value = 0.5f,
                        int label = 0) {
  ImageRecord r;
  r.image_id = id;
  r.patient_id = patient;
  r.pixels = Image(size, size, value);
  r.nodule_label = label;
  return r;
}

void write_text(const std::filesystem::path& p, const std::string& s) { std::ofstream(p) << s; }

std::vector<ImageRecord> many_patients(int n_patients, int per_patient) {
  std::vector<ImageRecord> out;
  for (int p = 0; p < n_patients; ++p)
    for (int i = 0; i < per_patient; ++i)
      out.push_back(flat_record("img_" + std::to_string(p) + "_" + std::to_string(i), "p" + std::to_string(p), 8,
                                0.5f, (p + i) % 5 == 0));
  return out;
}

}  // namespace

TEST(Csv, TrimAndSplit) {
  EXPECT_EQ(csv::trim("  a b \r"), "a b");
  EXPECT_EQ(csv::split("a, b,,c"), (std::vector<std::string>{"a", "b", "", "c"}));
}

TEST(Csv, MissingColumnAndBadInteger) {
  TempDir dir("csv");
  write_text(dir / "t.csv", "a,b\n1,2\n");
  EXPECT_THROW(csv::read(dir / "t.csv", {"a", "c"}), ValidationError);
  EXPECT_EQ(csv::read(dir / "t.csv", {"a"}).rows.size(), 1u);
  EXPECT_THROW(csv::to_int("1.5", "x"), ValidationError);
  EXPECT_EQ(csv::to_int("-7", "x"), -7);
}

TEST(Png, SixteenBitRoundTripWithinQuantization) {
  TempDir dir("png16");
  Rng rng(1);
  const Image img = test::random_image(13, 7, rng);
  png::write_gray(dir / "a.png", img, 16);
  const auto back = png::read_gray(dir / "a.png");
  EXPECT_EQ(back.bit_depth, 16);
  ASSERT_TRUE(back.pixels.same_shape(img));
  for (std::size_t i = 0; i < img.size(); ++i) EXPECT_NEAR(back.pixels.data()[i], img.data()[i], 0.5 / 65535 + 1e-7);
}

TEST(Png, EightBitAndMaskRoundTrip) {
  TempDir dir("png8");
  Image img(3, 2);
  img(0, 0) = 1.0f;
  img(2, 1) = 0.2f;
  png::write_gray(dir / "a.png", img, 8);
  const auto back = png::read_gray(dir / "a.png");
  EXPECT_EQ(back.bit_depth, 8);
  EXPECT_FLOAT_EQ(back.pixels(0, 0), 1.0f);
  EXPECT_NEAR(back.pixels(2, 1), 0.2f, 0.5 / 255);

  Mask m(4, 3);
  m(1, 2) = 1;
  png::write_mask(dir / "m.png", m);
  EXPECT_EQ(png::read_mask(dir / "m.png"), m);
}

TEST(Png, CorruptFileIsIngestionError) {
  TempDir dir("pngbad");
  write_text(dir / "bad.png", "not a png at all");
  EXPECT_THROW(png::read_gray(dir / "bad.png"), IngestionError);
  EXPECT_THROW(png::read_gray(dir / "missing.png"), IngestionError);
}

TEST(Validate, RejectsBrokenRecords) {
  auto r = flat_record("a", "p", 8);
  EXPECT_NO_THROW(validate(r));
  EXPECT_THROW(validate(r, 16), ValidationError);
  auto bad_pixel = r;
  bad_pixel.pixels(0, 0) = 1.5f;
  EXPECT_THROW(validate(bad_pixel), ValidationError);
  auto unlabeled_box = r;
  unlabeled_box.bboxes.push_back({0, 0, 2, 2});
  EXPECT_THROW(validate(unlabeled_box), ValidationError);
  auto outside = r;
  outside.nodule_label = 1;
  outside.bboxes.push_back({7, 7, 2, 2});
  EXPECT_THROW(validate(outside), ValidationError);
  auto mask = r;
  mask.lung_mask = Mask(4, 4);
  EXPECT_THROW(validate(mask), ValidationError);
}

class LoadDataset : public ::testing::Test {
 protected:
  TempDir dir{"load"};
  void SetUp() override {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    for (const char* id : {"b", "a", "c"}) {
      png::write_gray(dir / "images" / (std::string(id) + ".png"), Image(16, 16, 0.25f), 16);
      png::write_mask(dir / "masks" / (std::string(id) + ".png"), Mask(16, 16, 1));
    }
    write_text(dir / "labels.csv", "image_id,patient_id,nodule_label\nb,p1,0\na,p1,1\nc,p2,0\n");
    write_text(dir / "bboxes.csv", "image_id,x,y,w,h\na,2,4,6,8\n");
  }
};

TEST_F(LoadDataset, LoadsSortedWithBoxesAndMasks) {
  const auto recs = load_dataset(dir / "images", dir / "labels.csv", dir / "bboxes.csv", dir / "masks");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[0].image_id, "a");
  EXPECT_EQ(recs[0].bboxes, (std::vector<BoundingBox>{{2, 4, 6, 8}}));
  EXPECT_EQ(recs[0].nodule_label, 1);
  EXPECT_TRUE(recs[2].lung_mask.has_value());
  EXPECT_NEAR(recs[1].pixels(3, 3), 0.25f, 1e-4);
}

TEST_F(LoadDataset, WorkingSizeRescalesBoxes) {
  const auto recs = load_dataset(dir / "images", dir / "labels.csv", dir / "bboxes.csv", std::nullopt, {8});
  EXPECT_EQ(recs[0].width(), 8);
  EXPECT_EQ(recs[0].bboxes[0], (BoundingBox{1, 2, 3, 4}));
}

TEST_F(LoadDataset, MissingImageNamesTheId) {
  write_text(dir / "labels.csv", "image_id,patient_id,nodule_label\na,p1,0\nghost,p3,0\n");
  try {
    load_dataset(dir / "images", dir / "labels.csv", std::nullopt, std::nullopt);
    FAIL() << "expected IngestionError";
  } catch (const IngestionError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
}

TEST_F(LoadDataset, MissingPatientAndBadLabelAndStrayBox) {
  write_text(dir / "l1.csv", "image_id,patient_id,nodule_label\na,,0\n");
  EXPECT_THROW(load_dataset(dir / "images", dir / "l1.csv", std::nullopt, std::nullopt), ValidationError);
  write_text(dir / "l2.csv", "image_id,patient_id,nodule_label\na,p,2\n");
  EXPECT_THROW(load_dataset(dir / "images", dir / "l2.csv", std::nullopt, std::nullopt), ValidationError);
  write_text(dir / "b2.csv", "image_id,x,y,w,h\nzzz,0,0,1,1\n");
  EXPECT_THROW(load_dataset(dir / "images", dir / "labels.csv", dir / "b2.csv", std::nullopt), ValidationError);
  write_text(dir / "b3.csv", "image_id,x,y,w,h\na,10,10,8,8\n");
  EXPECT_THROW(load_dataset(dir / "images", dir / "labels.csv", dir / "b3.csv", std::nullopt), ValidationError);
}

TEST_F(LoadDataset, CorruptImageIsIngestionError) {
  write_text(dir / "images" / "a.png", "garbage");
  EXPECT_THROW(load_dataset(dir / "images", dir / "labels.csv", std::nullopt, std::nullopt), IngestionError);
}

TEST(Split, PatientsAreDisjointAndComplete) {
  const auto recs = many_patients(50, 3);
  const auto split = split_by_patient(recs, {}, 9);
  std::map<std::string, int> owner;
  for (const auto& r : recs) owner[r.image_id] = -1;
  const std::vector<std::string>* parts[3] = {&split.train, &split.val, &split.test};
  for (int s = 0; s < 3; ++s)
    for (const auto& id : *parts[s]) {
      ASSERT_EQ(owner.at(id), -1) << id << " assigned twice";
      owner[id] = s;
    }
  std::map<std::string, int> patient_split;
  for (const auto& r : recs) {
    ASSERT_NE(owner[r.image_id], -1);
    auto [it, fresh] = patient_split.emplace(r.patient_id, owner[r.image_id]);
    EXPECT_EQ(it->second, owner[r.image_id]) << "patient " << r.patient_id << " straddles splits";
  }
  std::array<int, 3> count{};
  for (const auto& [p, s] : patient_split) ++count[s];
  EXPECT_NEAR(count[0], 35, 1);
  EXPECT_NEAR(count[1], 5, 1);
  EXPECT_NEAR(count[2], 10, 1);
}

TEST(Split, DeterministicPerSeed) {
  const auto recs = many_patients(30, 2);
  const auto a = split_by_patient(recs, {}, 4);
  const auto b = split_by_patient(recs, {}, 4);
  const auto c = split_by_patient(recs, {}, 5);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(a.train, c.train);
}

TEST(Split, PinnedImagesLandInTrain) {
  const auto recs = many_patients(30, 2);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto s = split_by_patient(recs, {}, seed, {"img_3_1", "img_17_0"});
    const std::set<std::string> train(s.train.begin(), s.train.end());
    EXPECT_TRUE(train.count("img_3_1") && train.count("img_3_0"));
    EXPECT_TRUE(train.count("img_17_0"));
  }
}

TEST(Split, RejectsBadFractions) {
  const auto recs = many_patients(4, 1);
  EXPECT_THROW(split_by_patient(recs, {0.5, 0.5, 0.5}, 0), ValidationError);
  EXPECT_THROW(split_by_patient(recs, {1.2, -0.1, -0.1}, 0), ValidationError);
}

TEST(MaskSpec, OnlyHalfSizeMasks) {
  EXPECT_NO_THROW(MaskSpec(64, 32));
  EXPECT_THROW(MaskSpec(64, 30), ValidationError);
  EXPECT_THROW(MaskSpec(63, 31), ValidationError);
  const MaskSpec m(64, 32);
  EXPECT_EQ(m.mask_box(), (BoundingBox{16, 16, 32, 32}));
}

TEST(Patches, CenterMaskTouchesOnlyTheHole) {
  Rng rng(3);
  ImageRecord r = flat_record("x", "p", 64);
  r.pixels = test::random_image(64, 64, rng);
  const MaskSpec spec(64, 32);
  const auto patch = get_patch_at(r, {0, 0}, 64);
  const auto masked = apply_center_mask(patch, spec, 0.0f);
  int untouched = 0, filled = 0;
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      if (spec.in_mask(x, y)) {
        EXPECT_EQ(masked.patch.pixels(x, y), 0.0f);
        ++filled;
      } else if (masked.patch.pixels(x, y) == patch.pixels(x, y)) {
        ++untouched;
      }
    }
  EXPECT_EQ(filled, 32 * 32);
  EXPECT_EQ(untouched, 64 * 64 - 32 * 32);
  EXPECT_THROW(apply_center_mask(get_patch_at(r, {0, 0}, 32), spec), GeometryError);
}

TEST(Patches, ClampedPatchStaysInBounds) {
  const auto r = flat_record("x", "p", 100);
  Rng rng(8);
  for (int i = 0; i < 500; ++i) {
    const Point c{static_cast<int>(uniform_int(rng, -20, 120)), static_cast<int>(uniform_int(rng, -20, 120))};
    const auto o = clamped_patch_origin(r, c, 64);
    ASSERT_GE(o.x, 0);
    ASSERT_GE(o.y, 0);
    ASSERT_LE(o.x + 64, 100);
    ASSERT_LE(o.y + 64, 100);
    if (c.x >= 32 && c.x <= 68) {
      EXPECT_EQ(o.x, c.x - 32);
    }
  }
  EXPECT_THROW(clamped_patch_origin(flat_record("s", "p", 40), {20, 20}, 64), GeometryError);
}

TEST(Patches, Patch2ImgRestoresSource) {
  Rng rng(4);
  auto r = flat_record("x", "p", 80);
  r.pixels = test::random_image(80, 80, rng);
  const auto patch = get_patch(r, Point{50, 20}, 32);
  EXPECT_EQ(patch2img(r, patch).pixels, r.pixels);
  Patch zero = patch;
  zero.pixels = Image(32, 32);
  const auto changed = patch2img(r, zero);
  EXPECT_EQ(changed.pixels(patch.origin.x, patch.origin.y), 0.0f);
  EXPECT_EQ(changed.pixels(0, 79), r.pixels(0, 79));
}

TEST(Patches, RandomPatchesAreValidAndSkipNoduleImages) {
  std::vector<ImageRecord> recs = {flat_record("neg", "p", 70, 0.1f), flat_record("pos", "q", 70, 0.9f, 1)};
  const auto patches = sample_random_patches(recs, 200, 64, 2, true);
  ASSERT_EQ(patches.size(), 200u);
  for (const auto& p : patches) {
    EXPECT_EQ(p.source_id, "neg");
    EXPECT_LE(p.origin.x + 64, 70);
    EXPECT_LE(p.origin.y + 64, 70);
  }
  EXPECT_THROW(sample_random_patches({recs[1]}, 5, 64, 2, true), ValidationError);
  EXPECT_EQ(sample_random_patches(recs, 20, 64, 2, false)[7].origin, sample_random_patches(recs, 20, 64, 2, false)[7].origin);
}
