#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "coinnet/cli.hpp"
#include "coinnet/data.hpp"
#include "coinnet/model.hpp"

using namespace coinnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("coinnet_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Small synthetic set shared by several tests: 3 classes x 6 samples on a 3x3x4 grid.
fs::path synth(const std::string& name, std::size_t styles = 1) {
  const auto dir = fresh_dir(name);
  const auto r = run({"gen-synth", "--out", dir.string(), "--classes", styles > 1 ? "4" : "3", "--per-class", "6",
                      "--height", "3", "--width", "3", "--channels", "4", "--styles", std::to_string(styles),
                      "--seed", "2"});
  EXPECT_EQ(r.code, 0) << r.err;
  return dir;
}

std::vector<std::string> train_args(const fs::path& dir, const std::string& ckpt, const std::string& epochs,
                                    const std::string& lr = "0.1") {
  return {"train", "--manifest", (dir / "manifest.tsv").string(), "--out", (dir / ckpt).string(), "--d", "8",
          "--blocks", "1", "--epochs", epochs, "--batch", "4", "--lr", lr};
}

}  // namespace

TEST(Cli, HelpAllMatchesGolden) {
  const auto r = run({"--help-all"});
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(r.out, slurp(fs::path(COINNET_GOLDEN_DIR) / "help_all.txt"));
  EXPECT_NE(r.out.find("Exit codes"), std::string::npos);
}

TEST(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, cli::kUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kUsage);
  const auto r = run({"check-sketch", "--bogus"});
  EXPECT_EQ(r.code, cli::kUsage);
  EXPECT_NE(r.err.find("--bogus"), std::string::npos) << r.err;
  EXPECT_EQ(run({"check-sketch", "--d", "x"}).code, cli::kUsage);
  EXPECT_EQ(run({"train", "--manifest", "m.tsv"}).code, cli::kUsage);
}

TEST(Cli, GenSynthWritesManifestAndReference) {
  const auto dir = synth("gen");
  const auto m = data::load_manifest(dir / "manifest.tsv");
  EXPECT_EQ(m.records.size(), 18u);
  EXPECT_NE(slurp(dir / "reference.tsv").find("nearest_centroid_top1\t"), std::string::npos);
}

TEST(Cli, ZeroEpochCheckpointIsInitialization) {
  const auto dir = synth("zero");
  auto args = train_args(dir, "c.cnmd", "0");
  args.insert(args.end(), {"--seed", "3"});
  const auto r = run(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const auto p = model::load_checkpoint(dir / "c.cnmd");
  EXPECT_EQ(p, model::init_params(p.config, 3));
  EXPECT_EQ(p.config.sketch_dim, 8u);
  EXPECT_EQ(p.config.classes, 3u);
  EXPECT_NE(r.err.find("# train configuration"), std::string::npos);
}

TEST(Cli, TrainingIsByteReproducible) {
  const auto dir = synth("repro");
  for (const char* name : {"a", "b"}) {
    auto args = train_args(dir, std::string(name) + ".cnmd", "2");
    args.insert(args.end(), {"--metrics", (dir / (std::string(name) + ".tsv")).string()});
    ASSERT_EQ(run(args).code, 0);
  }
  EXPECT_EQ(slurp(dir / "a.cnmd"), slurp(dir / "b.cnmd"));
  EXPECT_EQ(slurp(dir / "a.tsv"), slurp(dir / "b.tsv"));
  EXPECT_EQ(slurp(dir / "a.tsv").rfind("epoch\tloss\ttop1\tgroup_acc\n", 0), 0u);
}

TEST(Cli, EvalOnMemorizedTrainingSplit) {
  const auto dir = synth("eval");
  auto args = train_args(dir, "c.cnmd", "60", "0.3");
  args.insert(args.end(), {"--split-dir", (dir / "split").string(), "--no-augment", "--wd", "0"});
  const auto t = run(args);
  ASSERT_EQ(t.code, 0) << t.err;
  const auto r = run({"eval", "--manifest", (dir / "split" / "train.tsv").string(), "--checkpoint",
                      (dir / "c.cnmd").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("top1\t1\n"), std::string::npos) << r.out;
  const auto j = run({"eval", "--json", "--manifest", (dir / "split" / "train.tsv").string(), "--checkpoint",
                      (dir / "c.cnmd").string()});
  EXPECT_NE(j.out.find("\"top1\":1.0"), std::string::npos) << j.out;
}

TEST(Cli, DisjointWithSingletonGroupsEqualsTop1) {
  const auto dir = synth("disjoint");
  ASSERT_EQ(run(train_args(dir, "c.cnmd", "3")).code, 0);
  // Rewrite the manifest with group = class and a groups file mapping k -> k.
  auto m = data::load_manifest(dir / "manifest.tsv");
  for (auto& rec : m.records) rec.group = static_cast<std::int64_t>(rec.label);
  std::ofstream(dir / "grouped.tsv") << data::format_manifest(m, dir);
  std::ofstream(dir / "groups.tsv") << "class\tgroup\n0\t0\n1\t1\n2\t2\n";
  const auto top1 = run({"eval", "--json", "--manifest", (dir / "manifest.tsv").string(), "--checkpoint",
                         (dir / "c.cnmd").string()});
  const auto grp = run({"eval-disjoint", "--json", "--manifest", (dir / "grouped.tsv").string(), "--checkpoint",
                        (dir / "c.cnmd").string(), "--groups", (dir / "groups.tsv").string()});
  ASSERT_EQ(grp.code, 0) << grp.err;
  const auto value = [](const std::string& s, const std::string& key) {
    const auto at = s.find("\"" + key + "\":");
    return std::stod(s.substr(at + key.size() + 3));
  };
  EXPECT_EQ(value(top1.out, "top1"), value(grp.out, "group_accuracy"));
}

TEST(Cli, DisjointRejectsBadGroupsFile) {
  const auto dir = synth("badgroups", 2);
  ASSERT_EQ(run(train_args(dir, "c.cnmd", "0")).code, 0);
  std::ofstream(dir / "groups.tsv") << "klass\tgroup\n";
  const auto r = run({"eval-disjoint", "--manifest", (dir / "manifest.tsv").string(), "--checkpoint",
                      (dir / "c.cnmd").string(), "--groups", (dir / "groups.tsv").string()});
  EXPECT_EQ(r.code, cli::kBadInput);
}

TEST(Cli, DimensionMismatchExitCode) {
  const auto a = synth("mismatch_a");
  ASSERT_EQ(run(train_args(a, "c.cnmd", "0")).code, 0);
  const auto b = fresh_dir("mismatch_b");
  ASSERT_EQ(run({"gen-synth", "--out", b.string(), "--classes", "3", "--per-class", "2", "--height", "3", "--width",
                 "3", "--channels", "5"})
                .code,
            0);
  const auto r = run({"eval", "--manifest", (b / "manifest.tsv").string(), "--checkpoint", (a / "c.cnmd").string()});
  EXPECT_EQ(r.code, cli::kShapeMismatch);
  EXPECT_NE(r.err.find("3x3x5"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("3x3x4"), std::string::npos) << r.err;
}

TEST(Cli, MissingAndCorruptInputs) {
  const auto dir = synth("missing");
  EXPECT_EQ(run({"eval", "--manifest", (dir / "manifest.tsv").string(), "--checkpoint", (dir / "nope").string()}).code,
            cli::kIo);
  std::ofstream(dir / "junk.cnmd") << "not a checkpoint";
  EXPECT_EQ(
      run({"eval", "--manifest", (dir / "manifest.tsv").string(), "--checkpoint", (dir / "junk.cnmd").string()}).code,
      cli::kBadInput);
}

TEST(Cli, CheckSketchDefaultsPass) {
  const auto r = run({"check-sketch"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST(Cli, CheckSketchSingleTrialReportsEstimateOnly) {
  const auto r = run({"check-sketch", "--trials", "1"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("estimate only"), std::string::npos) << r.out;
  EXPECT_EQ(run({"check-sketch", "--trials", "0"}).code, cli::kUsage);
}

TEST(Cli, CheckGradPasses) {
  const auto r = run({"check-grad", "--seed", "5"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}
