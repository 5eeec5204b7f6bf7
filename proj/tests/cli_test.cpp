#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "lfa/csv.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using lfa::test::TempDir;

namespace {

int run(const std::string& args, const fs::path& log = {}) {
  std::string cmd = std::string(LFA_CLI_PATH) + " " + args;
  cmd += log.empty() ? " >/dev/null 2>&1" : " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int data_lines(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  int n = -1;
  while (std::getline(in, line))
    if (!line.empty()) ++n;
  return n;
}

// Small phantom dataset shared by the tests below.
class Cli : public ::testing::Test {
 protected:
  static inline TempDir* dir = nullptr;
  static void SetUpTestSuite() {
    dir = new TempDir("cli");
    ASSERT_EQ(run("phantom-gen --out " + (*dir / "data").string() +
                  " --n_images 160 --image_size 64 --nodule_fraction 0.3 --min_amplitude 0.3 --seed 2"),
              0);
    ASSERT_EQ(run("prepare-patches --data_dir " + (*dir / "data").string() + " --out " + (*dir / "patches").string() +
                  " --patch_size 32 --mask_size 16 --n_train_patches 300 --n_val_patches 40 --n_test_patches 40"),
              0);
  }
  static void TearDownTestSuite() {
    delete dir;
    dir = nullptr;
  }
  static std::string data() { return (*dir / "data").string(); }
  static std::string patches() { return (*dir / "patches").string(); }
};

}  // namespace

TEST_F(Cli, PhantomGenWritesDatasetAndProvenance) {
  EXPECT_TRUE(fs::exists(*dir / "data" / "labels.csv"));
  EXPECT_TRUE(fs::exists(*dir / "data" / "bboxes.csv"));
  EXPECT_EQ(data_lines(*dir / "data" / "labels.csv"), 160);
  const auto cfg = nlohmann::json::parse(slurp(*dir / "data" / "resolved_config.json"));
  EXPECT_EQ(cfg["n_images"], 160);
  EXPECT_EQ(cfg["preset"], "desk");
  const auto sha = slurp(*dir / "data" / "inputs.sha1");
  EXPECT_EQ(sha.find('\n'), 40u);
  EXPECT_NE(slurp(*dir / "data" / "log.txt").find("stage=phantom-gen step=done metric=images value=160"),
            std::string::npos);
}

TEST_F(Cli, PreparePatchesSplitsByPatient) {
  EXPECT_EQ(data_lines(*dir / "patches" / "train" / "index.csv"), 300);
  const auto t = lfa::csv::read(*dir / "patches" / "split.csv", {"image_id", "patient_id", "split"});
  std::map<std::string, std::string> owner;
  for (const auto& row : t.rows) {
    auto [it, fresh] = owner.emplace(row[1], row[2]);
    EXPECT_EQ(it->second, row[2]);
  }
  EXPECT_EQ(t.rows.size(), 160u);
}

TEST_F(Cli, PerfectOracleReportsInfinity) {
  const auto out = *dir / "eval_perfect";
  ASSERT_EQ(run("eval-inpainter --oracle perfect --patch_size 32 --mask_size 16 --patches_dir " + patches() +
                " --out " + out.string()),
            0);
  const auto t = lfa::csv::read(out / "psnr.csv", {"row", "mean_psnr", "std_psnr", "n"});
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0][1], "inf");
  EXPECT_TRUE(std::isfinite(std::stod(t.rows[1][1])));
}

TEST_F(Cli, ValidationErrorsAreListedTogether) {
  const auto log = dir->path() / "bad.log";
  EXPECT_EQ(run("phantom-gen --out " + (*dir / "bad").string() + " --n_images abc --seed x --preset huge", log), 1);
  const auto text = slurp(log);
  EXPECT_NE(text.find("n_images"), std::string::npos);
  EXPECT_NE(text.find("seed"), std::string::npos);
  EXPECT_NE(text.find("huge"), std::string::npos);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run("no-such-stage"), 1);
  EXPECT_EQ(run("phantom-gen --no_such_flag 3"), 1);
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("train-inpainter --out " + (*dir / "x").string()), 1);
  EXPECT_EQ(run("prepare-patches --data_dir " + (*dir / "nowhere").string() + " --out " + (*dir / "y").string()), 1);
}

TEST_F(Cli, ConfigFileAndFlagPrecedence) {
  const auto cfg = dir->path() / "run.json";
  std::ofstream(cfg) << R"({"n_images": 8, "image_size": 32, "seed": 4})";
  const auto out = *dir / "prec";
  ASSERT_EQ(run("phantom-gen --config " + cfg.string() + " --seed 9 --out " + out.string()), 0);
  const auto resolved = nlohmann::json::parse(slurp(out / "resolved_config.json"));
  EXPECT_EQ(resolved["n_images"], 8);
  EXPECT_EQ(resolved["seed"], 9);
  std::ofstream(cfg) << R"({"bogus_key": 1})";
  EXPECT_EQ(run("phantom-gen --config " + cfg.string() + " --out " + out.string()), 1);
}

TEST_F(Cli, EndToEndPipeline) {
  const std::string common = " --data_dir " + data() + " --patch_size 32 --mask_size 16 --seed 1";
  const auto inp = *dir / "inpainter", c1 = *dir / "c1", bank = *dir / "bank", local = *dir / "local",
             att = *dir / "att", curve = *dir / "curve";
  ASSERT_EQ(run("train-inpainter --patches_dir " + patches() + " --out " + inp.string() +
                " --patch_size 32 --mask_size 16 --inpainter_epochs 2"),
            0);
  EXPECT_EQ(data_lines(inp / "metrics.csv"), 2);
  ASSERT_EQ(run("eval-inpainter --patches_dir " + patches() + " --inpainter " + inp.string() + " --out " +
                (*dir / "eval").string()),
            0);
  ASSERT_EQ(run("train-classifier" + common + " --classifier_epochs 6 --out " + c1.string()), 0);
  EXPECT_TRUE(fs::exists(c1 / "eval.csv"));
  ASSERT_EQ(run("extract-nodules" + common + " --inpainter " + inp.string() + " --classifier " + c1.string() +
                " --out " + bank.string()),
            0);
  const auto summary = nlohmann::json::parse(slurp(bank / "bank_summary.json"));
  EXPECT_GT(summary["accepted"].get<int>(), 0);
  EXPECT_EQ(summary["accepted"].get<int>() + summary["rejected_by_gate"].get<int>() +
                summary["rejected_by_geometry"].get<int>(),
            summary["candidates"].get<int>());
  ASSERT_EQ(run("train-classifier" + common + " --regime local --k 0.3 --classifier_epochs 2 --dump_plans true" +
                " --bank " + bank.string() + " --out " + local.string()),
            0);
  EXPECT_TRUE(fs::exists(local / "plans" / "epoch_2.jsonl"));

  ASSERT_EQ(run("attention-map" + common + " --inpainter " + inp.string() + " --classifier " + c1.string() +
                " --out " + att.string()),
            0);
  EXPECT_TRUE(fs::exists(att / "overlay.png"));
  EXPECT_TRUE(fs::exists(att / "map.png"));

  ASSERT_EQ(run("learning-curve" + common + " --fractions 1.0,0.5 --repeats 1 --classifier_epochs 1 --bank " +
                bank.string() + " --out " + curve.string()),
            0);
  EXPECT_EQ(data_lines(curve / "learning_curve.csv"), 6);
  EXPECT_TRUE(fs::exists(curve / "learning_curve.txt"));
}

TEST_F(Cli, RepeatedRunsGiveIdenticalMetrics) {
  const std::string common = " --data_dir " + data() + " --seed 3 --classifier_epochs 2";
  ASSERT_EQ(run("train-classifier" + common + " --out " + (*dir / "r1").string()), 0);
  ASSERT_EQ(run("train-classifier" + common + " --out " + (*dir / "r2").string()), 0);
  EXPECT_EQ(slurp(*dir / "r1" / "metrics.csv"), slurp(*dir / "r2" / "metrics.csv"));
  EXPECT_EQ(slurp(*dir / "r1" / "eval.csv"), slurp(*dir / "r2" / "eval.csv"));
  EXPECT_EQ(slurp(*dir / "r1" / "inputs.sha1"), slurp(*dir / "r2" / "inputs.sha1"));
}
