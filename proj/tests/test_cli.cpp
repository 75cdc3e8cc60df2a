#include <gtest/gtest.h>

#include "fuseguard/cli.hpp"
#include "fuseguard/harness.hpp"
#include "support.hpp"

using namespace fuseguard;
using namespace fuseguard::testing;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "fuseguard");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

// A tiny dataset and a one-epoch checkpoint shared by the pipeline tests.
struct Workspace {
  std::filesystem::path dir = temp_dir("cli");
  std::string data = (dir / "data").string();
  std::string ckpt = (dir / "ckpt").string();
  std::string det = (dir / "det.json").string();
  bool ok = false;

  Workspace() {
    ok = run({"generate", "--out", data, "--classes", "3", "--per-class", "8", "--size", "16", "--seed", "1"}) == 0 &&
         run({"train", "--data", data, "--out", ckpt, "--epochs", "1", "--seed", "1"}) == 0 &&
         run({"calibrate", "--ckpt", ckpt, "--data", data, "--out", det}) == 0;
  }
};

const Workspace& workspace() {
  static const Workspace w;
  return w;
}

}  // namespace

TEST(AscendingList, ParsesAndRejectsDisorder) {
  EXPECT_EQ(parse_ascending_list("0.05,0.1, 0.3"), (std::vector<double>{0.05, 0.1, 0.3}));
  EXPECT_EQ(parse_ascending_list("2"), (std::vector<double>{2.0}));
  EXPECT_THROW(parse_ascending_list("0.1,0.05"), std::invalid_argument);
  EXPECT_THROW(parse_ascending_list("0.1,0.1"), std::invalid_argument);
  EXPECT_THROW(parse_ascending_list("0.1,abc"), std::invalid_argument);
  EXPECT_THROW(parse_ascending_list(""), std::invalid_argument);
}

TEST(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"bogus"}), 2);
  EXPECT_EQ(run({"attack", "--data", "d", "--out", "o"}), 2);  // --ckpt missing
  EXPECT_EQ(run({"attack", "--ckpt", "c", "--data", "d", "--out", "o", "--eps", "0.2,0.1"}), 2);
  EXPECT_EQ(run({"train", "--data", "d", "--out", "o", "--optimizer", "adam"}), 2);
  EXPECT_EQ(run({"--help"}), 0);
}

TEST(Cli, MissingCheckpointIsARuntimeFailure) {
  ::testing::internal::CaptureStderr();
  const int code = run({"attack", "--ckpt", "/nonexistent/ckpt_dir", "--data", "d", "--out", "o"});
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 1);
  EXPECT_NE(err.find("/nonexistent/ckpt_dir"), std::string::npos) << err;
}

TEST(Cli, PipelineWritesEveryArtifact) {
  const auto& w = workspace();
  ASSERT_TRUE(w.ok);
  EXPECT_EQ(load_checkpoint_metadata(w.ckpt)["seed"], 1);
  EXPECT_TRUE(load_detector(w.det).calibrated());

  const std::string attack_out = (w.dir / "attack.json").string();
  ASSERT_EQ(run({"attack", "--ckpt", w.ckpt, "--data", w.data, "--out", attack_out, "--eps", "0.1,0.2", "--steps", "3",
                 "--limit", "4", "--split", "train", "--detector", w.det, "--seed", "7"}),
            0);
  const auto j = nlohmann::json::parse(read_text(attack_out));
  EXPECT_EQ(j["config"]["seed"], 7);
  ASSERT_EQ(j["runs"].size(), 2u);
  EXPECT_EQ(j["runs"][0]["samples"].size(), 4u);
  for (const auto& s : j["runs"][1]["samples"]) EXPECT_LE(s["linf_norm"].get<double>(), 0.2 + 1e-6);

  const std::string curve = (w.dir / "curve" / "patch.csv").string();
  ASSERT_EQ(run({"evaluate", "--ckpt", w.ckpt, "--data", w.data, "--out", curve, "--mode", "patch", "--levels", "0,2,4",
                 "--steps", "3", "--limit", "6", "--detector", w.det}),
            0);
  const auto points = parse_curve_csv(read_text(curve));
  ASSERT_EQ(points.size(), 3u);
  EXPECT_EQ(points[2].level, 4.0);
  const auto side = nlohmann::json::parse(read_text((w.dir / "curve" / "patch.json").string()));
  EXPECT_EQ(side["points"].size(), 3u);

  const std::string heat = (w.dir / "cka.csv").string();
  ASSERT_EQ(run({"cka", "--ckpt", w.ckpt, "--data", w.data, "--out", heat, "--stream", "depth", "--kernel", "rbf", "--split",
                 "train", "--limit", "10"}),
            0);
  EXPECT_EQ(read_text(heat).substr(0, 19), "layer_i,layer_j,cka");
  EXPECT_TRUE(nlohmann::json::parse(read_text((w.dir / "cka.json").string())).contains("redundancy"));
}

TEST(Cli, AdaptiveModesNeedADetector) {
  const auto& w = workspace();
  ASSERT_TRUE(w.ok);
  ::testing::internal::CaptureStderr();
  const int code = run({"attack", "--ckpt", w.ckpt, "--data", w.data, "--out", (w.dir / "x.json").string(), "--mode",
                        "adaptive-pgd", "--steps", "2", "--limit", "1"});
  const std::string err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(code, 1);
  EXPECT_NE(err.find("detector"), std::string::npos) << err;
}

TEST(Cli, ConfigFileSuppliesFlags) {
  const auto& w = workspace();
  ASSERT_TRUE(w.ok);
  const auto cfg = w.dir / "eval.toml";
  write_text(cfg, "[evaluate]\nsteps = 2\nlimit = 3\nlevels = \"0,0.1\"\n");
  const std::string out = (w.dir / "cfg_curve.csv").string();
  ASSERT_EQ(run({"--config", cfg.string(), "evaluate", "--ckpt", w.ckpt, "--data", w.data, "--out", out}), 0);
  const auto points = parse_curve_csv(read_text(out));
  ASSERT_EQ(points.size(), 2u);
  EXPECT_EQ(points[1].n, 3u);
}
