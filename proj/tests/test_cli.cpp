#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fusedmad/model_io.hpp"
#include "fusedmad/rng.hpp"
#include "fusedmad/table.hpp"

#ifndef FUSEDMAD_CLI_PATH
#error "FUSEDMAD_CLI_PATH must name the CLI binary"
#endif

namespace fs = std::filesystem;
using namespace fusedmad;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("fusedmad_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override {
    if (!HasFailure()) fs::remove_all(dir_);
  }

  CliRun run(const std::string& args) const {
    const fs::path log = dir_ / "cli.log";
    const std::string cmd = std::string("\"") + FUSEDMAD_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
  }

  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  // Small synthetic catalog plus harvested plan and generated images.
  void pipeline(const std::string& seed = "3") {
    ASSERT_EQ(run("--seed " + seed + " --out " + path("synth") +
                  " synth --identities 4 --captures 3 --size 32 --heldout 1").code, 0);
    ASSERT_EQ(run("--seed " + seed + " --out " + path("harvest") + " harvest --catalog " + path("synth/catalog")).code, 0);
    ASSERT_EQ(run("--seed " + seed + " --out " + path("harvest/generated") + " morph --plan " + path("harvest/plan.csv")).code, 0);
    ASSERT_EQ(run("--seed " + seed + " --out " + path("harvest/generated") + " selfmorph --plan " + path("harvest/plan.csv")).code, 0);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, HelpListsCommandsAndKeys) {
  const auto top = run("--help");
  EXPECT_EQ(top.code, 0);
  for (const char* c : {"synth", "harvest", "morph", "selfmorph", "filter", "train", "score", "bench", "gradcheck",
                        "--config", "--seed", "--jobs", "--out"}) {
    EXPECT_NE(top.output.find(c), std::string::npos) << c;
  }
  const auto train = run("train --help");
  EXPECT_EQ(train.code, 0);
  for (const char* k : {"--manifest", "--input-side", "--classes", "--hidden", "--feature-dim", "--tie-backbones",
                        "--alpha1", "--alpha2", "--beta", "--learning-rate", "--batch-size", "--epochs"}) {
    EXPECT_NE(train.output.find(k), std::string::npos) << k;
  }
}

TEST_F(Cli, ValidationErrorsExitOne) {
  EXPECT_EQ(run("--seed 1 --out " + path("o") + " gradcheck --bogus 3").code, 1);
  EXPECT_EQ(run("--out " + path("o") + " gradcheck").code, 1);
  EXPECT_EQ(run("--seed 1 gradcheck").code, 1);
  EXPECT_EQ(run("--seed 1 --out " + path("o")).code, 1);
  EXPECT_EQ(run("--seed 1 --out " + path("o") + " gradcheck --models x").code, 1);
  std::ofstream(path("bad.json")) << R"({"models": 1, "nonsense": 2})";
  EXPECT_EQ(run("--config " + path("bad.json") + " --seed 1 --out " + path("o") + " gradcheck").code, 1);
  std::ofstream(path("plan.csv")) << "kind,output\n";
  const auto r = run("--seed 1 --out " + path("o") + " morph --plan " + path("plan.csv"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("plan.csv"), std::string::npos);
  EXPECT_EQ(run("--seed 1 --out " + path("o") + " harvest --catalog " + path("missing")).code, 1);
}

TEST_F(Cli, GradcheckPassesAndRecordsConfig) {
  const auto r = run("--seed 5 --out " + path("g") + " gradcheck --models 2");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("PASS rtol=1e-4"), std::string::npos) << r.output;
  const auto cfg = slurp(dir_ / "g" / "gradcheck_config.json");
  EXPECT_NE(cfg.find("\"command\": \"gradcheck\""), std::string::npos);
  EXPECT_NE(cfg.find("\"models\": 2"), std::string::npos);
  EXPECT_NE(cfg.find("\"seed\": 5"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "g" / "gradcheck.csv"));
}

TEST_F(Cli, ConfigFileAndOverrides) {
  std::ofstream(path("c.json")) << R"({"seed": 9, "out": ")" << path("from_config") << R"(", "models": 1, "rtol": 1e-3})";
  ASSERT_EQ(run("--config " + path("c.json") + " gradcheck --models 2").code, 0);
  const auto cfg = slurp(dir_ / "from_config" / "gradcheck_config.json");
  EXPECT_NE(cfg.find("\"models\": 2"), std::string::npos);
  EXPECT_NE(cfg.find("\"seed\": 9"), std::string::npos);
  // The recorded config replays into a fresh directory with identical results.
  ASSERT_EQ(run("--config " + path("from_config/gradcheck_config.json") + " --out " + path("replay") + " gradcheck").code, 0);
  EXPECT_EQ(slurp(dir_ / "replay" / "gradcheck.csv"), slurp(dir_ / "from_config" / "gradcheck.csv"));
  EXPECT_EQ(run("--config " + path("from_config/gradcheck_config.json") + " --out " + path("x") + " harvest").code, 1);
}

TEST_F(Cli, PipelineIsDeterministic) {
  pipeline();
  const auto plan = read_table(path("harvest/plan.csv"), {});
  ASSERT_FALSE(plan.rows.empty());
  // Same seed, different job counts: identical bytes.
  ASSERT_EQ(run("--seed 3 --jobs 3 --out " + path("again") + " morph --plan " + path("harvest/plan.csv")).code, 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(dir_ / "harvest" / "generated")) {
    if (e.path().filename().string().starts_with("morph_") && e.path().extension() == ".pgm") {
      EXPECT_EQ(slurp(e.path()), slurp(dir_ / "again" / e.path().filename())) << e.path();
      ++compared;
    }
  }
  EXPECT_GT(compared, 0u);
  const auto manifest = slurp(dir_ / "harvest" / "manifest.csv");
  ASSERT_EQ(run("--seed 3 --out " + path("harvest2") + " harvest --catalog " + path("synth/catalog") + " --generated " +
                path("harvest/generated")).code, 0);
  EXPECT_EQ(slurp(dir_ / "harvest2" / "manifest.csv"), manifest);
}

TEST_F(Cli, TrainEpochsZeroThenBench) {
  pipeline();
  const auto r = run("--seed 3 --out " + path("model") + " train --manifest " + path("harvest/manifest.csv") +
                     " --input-side 8 --hidden 6 --feature-dim 4 --epochs 0");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto bundle = load_model(path("model/model.ckpt"));
  const auto init = DualModel::initialize(bundle.model.config, Rng::mix(3, 7));
  EXPECT_EQ(bundle.model.params, init.params);
  EXPECT_EQ(bundle.input_side, 8);

  const auto b = run("--out " + path("bench") + " bench --model " + path("model/model.ckpt") + " --protocol " +
                     path("synth/protocol.txt"));
  ASSERT_EQ(b.code, 0) << b.output;
  const auto report = slurp(dir_ / "bench" / "report.csv");
  const auto header = report.substr(0, report.find('\n'));
  EXPECT_EQ(std::count(header.begin(), header.end(), '@'), 4) << header;
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 2);
  EXPECT_TRUE(fs::exists(dir_ / "bench" / "bench_config.json"));

  ASSERT_EQ(run("--out " + path("bench2") + " bench --model " + path("model/model.ckpt") + " --protocol " +
                path("synth/protocol.txt")).code, 0);
  EXPECT_EQ(slurp(dir_ / "bench2" / "report.csv"), report);

  ASSERT_EQ(run("--out " + path("score") + " score --model " + path("model/model.ckpt") + " --protocol " +
                path("synth/protocol.txt") + " --mode differential").code, 0);
  EXPECT_TRUE(fs::exists(dir_ / "score" / "scores.csv"));
}

TEST_F(Cli, FilterOnGeneratedImages) {
  pipeline();
  const auto r = run("--seed 2 --out " + path("filter") + " filter --images " + path("synth/catalog") +
                     " --threshold blur=0 --threshold illumination=0 --sample-bins 3 --min-per-bin 1");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto scores = read_table(path("filter/scores.csv"), {"image_path", "scorer_id", "value"});
  EXPECT_EQ(scores.rows.size(), 2u * 4u * 3u);
  const auto accepted = read_table(path("filter/accepted.csv"), {});
  EXPECT_EQ(accepted.rows.size(), 12u);
  EXPECT_EQ(run("--seed 2 --out " + path("f2") + " filter --images " + path("synth/catalog") + " --threshold blur").code, 1);
}

TEST_F(Cli, RuntimeFailureExitsTwo) {
  pipeline();
  // A plan row whose source image vanished fails at generation time.
  fs::remove(dir_ / "harvest" / "generated" / "morph_000000.pgm");
  const auto plan = read_table(path("harvest/plan.csv"), {});
  fs::remove(plan.rows.front().fields[plan.column("image_a")]);
  const auto r = run("--seed 3 --out " + path("broken") + " morph --plan " + path("harvest/plan.csv"));
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("row 1"), std::string::npos) << r.output;
}
