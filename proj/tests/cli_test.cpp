#include <gtest/gtest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cei/archive.hpp"
#include "cei/blend.hpp"
#include "cei/blocks.hpp"
#include "cei/dataset.hpp"
#include "cei/image.hpp"
#include "cei/metrics.hpp"
#include "cli.hpp"
#include "support.hpp"

namespace cei {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out, err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// One small dataset and one short A2B2A run shared by the tests below.
class CliWorkflow : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::TempDir("cli");
    const CliRun g = cli({"gen-data", "--out", root("data"), "--count", "4", "--size", "16", "--seed", "3"});
    ASSERT_EQ(g.code, 0) << g.err;
    const CliRun t = cli({"train", "--data", root("data/A/manifest.tsv"), "--data", root("data/B/manifest.tsv"),
                       "--out-dir", root("run1"), "--epochs", "2", "--channels", "4", "--patch", "16", "--quiet"});
    ASSERT_EQ(t.code, 0) << t.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string root(const std::string& rel) { return (dir_->path() / rel).string(); }

  static test::TempDir* dir_;
};

test::TempDir* CliWorkflow::dir_ = nullptr;

TEST_F(CliWorkflow, GenDataWritesManifests) {
  for (const char* name : {"A", "B"}) {
    const DatasetManifest m = read_manifest(root(std::string("data/") + name + "/manifest.tsv"));
    EXPECT_EQ(m.records.size(), 4u);
    EXPECT_TRUE(validate_manifest(m).empty());
  }
  EXPECT_EQ(read_manifest(root("data/B/manifest.tsv")).effect.strength, 3.0);
}

TEST_F(CliWorkflow, TrainWritesArchivesAndTraces) {
  for (const char* m : {"A0", "B", "A"}) {
    EXPECT_TRUE(fs::exists(root(std::string("run1/model") + m + ".cei"))) << m;
    const auto trace = read_bytes(root(std::string("run1/trace_") + m + ".csv"));
    EXPECT_EQ(std::string(trace.begin(), trace.begin() + 18), "epoch,mean_loss,lr");
  }
  EXPECT_TRUE(fs::exists(root("run1/config.json")));
}

TEST_F(CliWorkflow, TrainRerunIsIdentical) {
  const CliRun t = cli({"train", "--data", root("data/A/manifest.tsv"), "--data", root("data/B/manifest.tsv"), "--out-dir",
                     root("run2"), "--epochs", "2", "--channels", "4", "--patch", "16", "--quiet"});
  ASSERT_EQ(t.code, 0) << t.err;
  for (const char* m : {"A0", "B", "A"}) {
    const std::string f = std::string("/model") + m + ".cei";
    EXPECT_EQ(read_bytes(root("run1") + f), read_bytes(root("run2") + f)) << m;
  }
}

TEST_F(CliWorkflow, TrainSingleStrategy) {
  const CliRun t = cli({"train", "--data", root("data/B/manifest.tsv"), "--strategy", "single", "--out-dir",
                     root("single"), "--epochs", "1", "--channels", "4", "--patch", "16", "--quiet"});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_TRUE(fs::exists(root("single/modelEffect.cei")));
  EXPECT_TRUE(fs::exists(root("single/modelIdentity.cei")));
  EXPECT_NE(t.out.find("blend pair\tIdentity\tEffect"), std::string::npos) << t.out;
}

TEST_F(CliWorkflow, TrainArgumentErrors) {
  EXPECT_EQ(cli({"train", "--data", root("data/A/manifest.tsv"), "--out-dir", root("x"), "--quiet"}).code, 2);
  const CliRun bad = cli({"train", "--data", root("data/A/manifest.tsv"), "--data", root("data/B/manifest.tsv"),
                          "--strategy", "nope", "--out-dir", root("x")});
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.err.find("strategy"), std::string::npos) << bad.err;
  // The 16x16 images cannot hold the default 64-pixel patch.
  const CliRun r = cli({"train", "--data", root("data/A/manifest.tsv"), "--data", root("data/B/manifest.tsv"),
                     "--out-dir", root("x"), "--epochs", "1", "--quiet"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("patch"), std::string::npos) << r.err;
}

TEST_F(CliWorkflow, TrainDivergenceNamesStage) {
  std::ofstream(root("huge.json")) << R"({"lr0": 1e30, "beta1": 0.9})";
  const CliRun r = cli({"train", "--data", root("data/A/manifest.tsv"), "--data", root("data/B/manifest.tsv"),
                     "--config", root("huge.json"), "--out-dir", root("diverge"), "--epochs", "5", "--channels", "4",
                     "--patch", "16", "--quiet"});
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_NE(r.err.find("A0"), std::string::npos) << r.err;
}

TEST_F(CliWorkflow, BlendEndpointsAreBitIdentical) {
  const std::string a = root("run1/modelA.cei"), b = root("run1/modelB.cei");
  CliRun r = cli({"blend", "--model-a", a, "--model-b", b, "--mode", "i", "--coeff", "1.0", "--out", root("i1.cei")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("formula\tV = 1*A + (1-1)*B"), std::string::npos) << r.out;
  EXPECT_EQ(read_bytes(root("i1.cei")), read_bytes(a));
  r = cli({"blend", "--model-a", a, "--model-b", b, "--mode", "fts", "--coeff", "1", "--out", root("fts1.cei")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_bytes(root("fts1.cei")), read_bytes(b));
}

TEST_F(CliWorkflow, BlendBelowFloorFails) {
  const CliRun r = cli({"blend", "--model-a", root("run1/modelA.cei"), "--model-b", root("run1/modelB.cei"), "--mode",
                     "f", "--coeff", "0.01", "--floor", "0.05", "--out", root("f.cei")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("floor 0.05"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(root("f.cei")));
}

TEST_F(CliWorkflow, BlendIncompatibleReportsDiff) {
  save_archive(DsanModel::create({6, 1}, 1).params(), root("c6.cei"));
  const CliRun r = cli({"blend", "--model-a", root("run1/modelA.cei"), "--model-b", root("c6.cei"), "--coeff", "0.5",
                     "--out", root("bad.cei")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("ifi.weight"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("compatible\tno"), std::string::npos) << r.err;
}

TEST_F(CliWorkflow, BlendThenPredictMatchesInMemory) {
  const std::string a = root("run1/modelA.cei"), b = root("run1/modelB.cei");
  ASSERT_EQ(cli({"blend", "--model-a", a, "--model-b", b, "--mode", "bts", "--coeff", "0.7", "--out",
                 root("bts.cei")})
                .code,
            0);
  const std::string input = root("data/inputs/img_001.pgm");
  ASSERT_EQ(cli({"predict", "--model", root("bts.cei"), "--input", input, "--output", root("bts.pgm")}).code, 0);
  const ParamSet v = extrapolate_twostep(load_archive(a), load_archive(b), BlendMode::BackTwoStep, 0.7);
  const Image want = DsanModel::from_params(v).predict(read_image(input));
  EXPECT_EQ(read_bytes(root("bts.pgm")), encode_pnm(want));
}

TEST_F(CliWorkflow, PredictPadsOddImages) {
  Rng rng(4);
  write_image(synthetic_image(15, 13, rng), root("odd.pgm"));
  const CliRun r = cli({"predict", "--model", root("run1/modelA.cei"), "--input", root("odd.pgm"), "--output",
                     root("odd_out.pgm")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_image(root("odd_out.pgm")).shape(), (Shape{1, 1, 15, 13}));
}

TEST_F(CliWorkflow, SweepWritesAllArtifacts) {
  const CliRun r = cli({"sweep", "--model-a", root("run1/modelA.cei"), "--model-b", root("run1/modelB.cei"), "--coeffs",
                     "0,0.25,0.5,0.75,1", "--input", root("data/inputs/img_000.pgm"), "--out-dir", root("sweep")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t outputs = 0, residuals = 0, sheets = 0, tables = 0;
  for (const auto& e : fs::directory_iterator(root("sweep"))) {
    const std::string n = e.path().filename().string();
    outputs += n.starts_with("output_");
    residuals += n.starts_with("residual_");
    sheets += n.starts_with("contact_sheet");
    tables += n == "metrics.tsv";
  }
  EXPECT_EQ(outputs, 5u);
  EXPECT_EQ(residuals, 5u);
  EXPECT_EQ(sheets, 1u);
  EXPECT_EQ(tables, 1u);
  // Five 16x16 tiles with a 12-row header and 2-pixel gaps.
  EXPECT_EQ(read_image(root("sweep/contact_sheet.pgm")).shape(), (Shape{1, 1, 28, 5 * 16 + 4 * 2}));
  const auto table = read_bytes(root("sweep/metrics.tsv"));
  const std::string text(table.begin(), table.end());
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
  EXPECT_EQ(text.substr(0, text.find('\n')), "index\tcoeff\ttv\tpsnr_vs_input\tmean_abs_residual");

  // The residual image is |input - output| of the written output.
  const Image in = read_image(root("data/inputs/img_000.pgm"));
  const Image o = read_image(root("sweep/output_02.pgm"));
  const Image res = read_image(root("sweep/residual_02.pgm"));
  for (std::size_t k = 0; k < in.size(); ++k) EXPECT_NEAR(res[k], std::abs(in[k] - o[k]), 1.5f / 255.0f);
}

TEST_F(CliWorkflow, SweepRejectsBadCoefficient) {
  const CliRun r = cli({"sweep", "--model-a", root("run1/modelA.cei"), "--model-b", root("run1/modelB.cei"), "--mode",
                     "b", "--coeffs", "0.5,0.99", "--input", root("data/inputs/img_000.pgm"), "--out-dir",
                     root("sweep_bad")});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliWorkflow, EvalAgainstOwnOutputsHitsCap) {
  // A network with a zeroed output conv predicts its bias everywhere; with an
  // 8-bit representable bias the written label reproduces it exactly.
  DsanModel m = DsanModel::create({4, 1}, 2);
  auto& p = m.mutable_params();
  p[*p.find("uro.out.weight")].tensor.fill(0.0f);
  p[*p.find("uro.out.bias")].tensor.fill(100.0f / 255.0f);
  save_archive(p, root("const.cei"));
  const DatasetManifest src = read_manifest(root("data/A/manifest.tsv"));
  DatasetManifest own = src;
  own.base_dir = root("own");
  fs::create_directories(own.base_dir);
  for (std::size_t i = 0; i < own.records.size(); ++i) {
    own.records[i].input = src.resolve(src.records[i].input);
    own.records[i].label = "label_" + std::to_string(i) + ".pgm";
    write_image(m.predict(read_image(own.records[i].input)), own.base_dir / own.records[i].label);
  }
  write_manifest(own, own.base_dir / "manifest.tsv");
  const CliRun r = cli({"eval", "--model", root("const.cei"), "--data", root("own/manifest.tsv")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("mean\t120.00\t1.000000\t120.00"), std::string::npos) << r.out;
}

TEST_F(CliWorkflow, EvalMatchesLibraryOnOnePair) {
  const CliRun r = cli({"eval", "--model", root("run1/modelA.cei"), "--data", root("data/A/manifest.tsv")});
  ASSERT_EQ(r.code, 0) << r.err;
  const DatasetManifest m = read_manifest(root("data/A/manifest.tsv"));
  const auto pairs = load_pairs(m, Split::Val);
  ASSERT_EQ(pairs.size(), 1u);
  const Image pred = DsanModel::from_params(load_archive(root("run1/modelA.cei"))).predict(pairs[0].input);
  char want[128];
  const double s = ssim(pred, pairs[0].label);
  std::snprintf(want, sizeof want, "mean\t%.2f\t%.6f\t%.2f\n", psnr(pred, pairs[0].label), s, ssim_db(s));
  EXPECT_NE(r.out.find(want), std::string::npos) << r.out << "\nwant " << want;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "image\tpsnr_db\tssim\tssim_db");
}

TEST_F(CliWorkflow, EvalEmptySplitFails) {
  DatasetManifest m = read_manifest(root("data/A/manifest.tsv"));
  for (auto& rec : m.records) rec.split = Split::Train;
  write_manifest(m, root("data/A/all_train.tsv"));
  const CliRun r = cli({"eval", "--model", root("run1/modelA.cei"), "--data", root("data/A/all_train.tsv")});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("empty"), std::string::npos) << r.err;
}

TEST(Cli, GradcheckVerb) {
  CliRun r = cli({"gradcheck", "--only", "conv2d", "--only", "dsa"});
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out, cli({"gradcheck", "--only", "conv2d", "--only", "dsa"}).out);
  r = cli({"gradcheck", "--only", "mul", "--corrupt", "mul"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("failing: mul"), std::string::npos) << r.out;
  EXPECT_EQ(cli({"gradcheck", "--corrupt", "nonsense"}).code, 2);
}

TEST(Cli, UsageErrors) {
  EXPECT_NE(cli({}).code, 0);
  EXPECT_NE(cli({"frobnicate"}).code, 0);
  EXPECT_NE(cli({"gradcheck", "--bogus"}).code, 0);
  EXPECT_NE(cli({"blend", "--coeff", "0.5"}).code, 0);
  const CliRun help = cli({"--help"});
  EXPECT_EQ(help.code, 0);
  for (const char* verb : {"gen-data", "train", "blend", "predict", "eval", "sweep", "gradcheck"}) {
    EXPECT_NE(help.out.find(verb), std::string::npos) << verb;
  }
}

TEST(Cli, CorruptArchiveRejected) {
  test::TempDir dir("cli_corrupt");
  save_archive(DsanModel::create({4, 1}, 1).params(), dir / "m.cei");
  auto bytes = read_bytes(dir / "m.cei");
  bytes[bytes.size() / 2] ^= 0x40;
  std::ofstream(dir / "bad.cei", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  Rng rng(1);
  write_image(synthetic_image(8, 8, rng), dir / "x.pgm");
  const CliRun r = cli({"predict", "--model", (dir / "bad.cei").string(), "--input", (dir / "x.pgm").string(),
                     "--output", (dir / "y.pgm").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("checksum"), std::string::npos) << r.err;
}

}  // namespace
}  // namespace cei
