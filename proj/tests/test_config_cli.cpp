// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "scmd/commands.hpp"
#include "scmd/config.hpp"
#include "scmd/error.hpp"

namespace scmd {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  args.insert(args.begin(), "scmd");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Json report_without_timing(const fs::path& p) {
  Json j = Json::parse(slurp(p));
  j.erase("wall_clock_seconds");
  return j;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("scmd_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    const Json cfg = Json::parse(R"({
      "data": {"num_classes": 3, "num_domains": 3, "samples_per_domain": 40, "feature_dim": 8},
      "student": {"hidden_dims": [16]},
      "train": {"total_steps": 30, "eval_every": 10, "batch_size": 16},
      "experiment": {"seeds": [0]},
      "theory": {"lemma1_trials": 500, "lemma2_class_size": 4, "lemma2_n": 6,
                 "lemma2_resamples": 50, "lemma3_trials": 50}
    })");
    config_ = (dir_ / "config.json").string();
    std::ofstream(config_) << cfg.dump(2);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::vector<std::string> base(const std::string& sub) const {
    return {"--config", config_, "--out", dir_.string(), sub};
  }

  fs::path dir_;
  std::string config_;
};

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}

TEST(RunConfig, DefaultsParseFromEmptyObject) {
  const RunConfig c = parse_run_config(Json::object());
  EXPECT_EQ(c.output_dir, "out");
  EXPECT_EQ(c.experiment.algorithm, "SCMD_full");
}

TEST(RunConfig, UnknownKeysAreAllListed) {
  const Json doc = Json::parse(R"({"trian": {}, "train": {"lr": 0.01, "lrr": 1}, "selection": {"frac": 0.5}})");
  try {
    parse_run_config(doc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfiguration);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("trian"), std::string::npos);
    EXPECT_NE(msg.find("train.lrr"), std::string::npos);
    EXPECT_NE(msg.find("selection.frac"), std::string::npos);
  }
}

TEST(RunConfig, TypeErrorsNameTheKey) {
  try {
    parse_run_config(Json::parse(R"({"train": {"total_steps": "many"}})"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfiguration);
    EXPECT_NE(std::string(e.what()).find("train.total_steps"), std::string::npos);
  }
  EXPECT_EQ(kind_of([] { parse_run_config(Json::parse(R"({"train": {"seed": -1}})")); }),
            ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([] { parse_run_config(Json::parse(R"({"selection": {"strategy": "hard"}})")); }),
            ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([] { parse_run_config(Json::array()); }), ErrorKind::kConfiguration);
}

TEST(RunConfig, ValueErrorsAreConfigurationErrors) {
  EXPECT_EQ(kind_of([] { parse_run_config(Json::parse(R"({"schedule": {"full_batch_fraction": 1.0}})")); }),
            ErrorKind::kConfiguration);
  EXPECT_EQ(kind_of([] { parse_run_config(Json::parse(R"({"experiment": {"seeds": []}})")); }),
            ErrorKind::kConfiguration);
}

TEST(RunConfig, ToJsonRoundTrips) {
  const Json doc = Json::parse(R"({
    "data": {"num_classes": 5, "noise": 0.2},
    "train": {"lr": 0.003, "optimizer": "sgd_momentum", "loss": {"temperature": 3.5}},
    "selection": {"strategy": "focal", "fraction": 0.3},
    "schedule": {"full_batch_fraction": 0.2},
    "student": {"hidden_dims": [8, 4]},
    "theory": {"lemma3": {"fixed_alphas": [0.1, 0.5]}}
  })");
  const RunConfig c = parse_run_config(doc);
  EXPECT_EQ(c.data.synthetic.num_classes, 5);
  EXPECT_EQ(c.train.selection.strategy, SelectionStrategy::kFocal);
  EXPECT_EQ(c.train.hidden_dims, (std::vector<int>{8, 4}));
  const Json once = to_json(c);
  EXPECT_EQ(to_json(parse_run_config(once)), once);
}

TEST(ResolveConfig, SeedOverridesEverySeededSection) {
  GlobalOptions g;
  g.seed = 42;
  g.out = "elsewhere";
  const RunConfig c = resolve_config(g);
  EXPECT_EQ(c.train.seed, 42u);
  EXPECT_EQ(c.sweep.sweep_seed, 42u);
  EXPECT_EQ(c.theory.seed, 42u);
  EXPECT_EQ(c.output_dir, "elsewhere");
  EXPECT_EQ(c.data.synthetic.seed, RunConfig{}.data.synthetic.seed);
}

TEST_F(CliTest, GenTeacherTrainEval) {
  ASSERT_EQ(cli(base("gen-data")).code, 0);
  ASSERT_TRUE(fs::exists(dir_ / "dataset.csv"));
  const CliResult t = cli(base("oracle-teacher"));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("teacher accuracy"), std::string::npos);

  auto train_args = base("train");
  const CliResult tr = cli(train_args);
  ASSERT_EQ(tr.code, 0) << tr.err;
  const Json report = Json::parse(slurp(dir_ / "report.json"));
  EXPECT_EQ(report["algorithm"], "SCMD_full");
  EXPECT_EQ(report["held_out"], 0);
  ASSERT_TRUE(fs::exists(dir_ / "final.ckpt"));

  auto eval_args = base("eval");
  for (const char* a : {"--checkpoint", "", "--dataset", "", "--domain", "0"}) eval_args.emplace_back(a);
  eval_args[6] = (dir_ / "final.ckpt").string();
  eval_args[8] = (dir_ / "dataset.csv").string();
  const CliResult ev = cli(eval_args);
  ASSERT_EQ(ev.code, 0) << ev.err;
  const Json e = Json::parse(slurp(dir_ / "eval.json"));
  EXPECT_EQ(e["accuracy"].get<double>(), report["final"]["test_raw"].get<double>());
}

TEST_F(CliTest, TrainIsReproducibleAndSeedMatters) {
  ASSERT_EQ(cli(base("train")).code, 0);
  const Json a = report_without_timing(dir_ / "report.json");
  ASSERT_EQ(cli(base("train")).code, 0);
  EXPECT_EQ(report_without_timing(dir_ / "report.json"), a);
  auto args = base("train");
  args.insert(args.begin(), {"--seed", "7"});
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_NE(report_without_timing(dir_ / "report.json")["steps"], a["steps"]);
}

TEST_F(CliTest, InspectTeacher) {
  ASSERT_EQ(cli(base("oracle-teacher")).code, 0);
  auto args = base("inspect-teacher");
  args.push_back((dir_ / "teacher.scmdta").string());
  const CliResult r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("crc: ok"), std::string::npos);
  EXPECT_NE(r.out.find("classes: 3"), std::string::npos);
  EXPECT_NE(r.out.find("image_embeddings: 120"), std::string::npos);
}

TEST_F(CliTest, TruncatedTeacherFailsWithKind) {
  ASSERT_EQ(cli(base("oracle-teacher")).code, 0);
  const fs::path p = dir_ / "teacher.scmdta";
  fs::resize_file(p, fs::file_size(p) / 2);
  auto args = base("inspect-teacher");
  args.push_back(p.string());
  const CliResult r = cli(args);
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: ", 0), 0u) << r.err;
  EXPECT_TRUE(r.err.find("error: truncated:") == 0 || r.err.find("error: crc_mismatch:") == 0) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(cli({"no-such-command"}).code, 2);
  const CliResult r = cli({"eval"});
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(r.err.rfind("error: usage:", 0), 0u) << r.err;
  EXPECT_EQ(cli({"--workers", "0", "gen-data"}).code, 2);
}

TEST_F(CliTest, BadConfigIsConfigurationError) {
  std::ofstream(dir_ / "bad.json") << R"({"train": {"learning_rate": 0.1}})";
  const CliResult r = cli({"--config", (dir_ / "bad.json").string(), "gen-data"});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: configuration:", 0), 0u) << r.err;
  EXPECT_NE(r.err.find("train.learning_rate"), std::string::npos);
}

TEST_F(CliTest, AblateEmitsOneRowPerStrategy) {
  auto args = base("ablate");
  args.insert(args.begin(), {"--workers", "4"});
  const CliResult r = cli(args);
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(dir_ / "ablation.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
  for (const char* s : {"none", "kl", "distill", "focal", "ce"}) {
    EXPECT_NE(csv.find(std::string("SCMD_variant(") + s + ")"), std::string::npos) << s;
  }
}

TEST_F(CliTest, VerifyTheoryWritesReports) {
  const CliResult r = cli(base("verify-theory"));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"lemma1.json", "lemma2.json", "lemma3.json"}) {
    ASSERT_TRUE(fs::exists(dir_ / f)) << f;
  }
  const Json l1 = Json::parse(slurp(dir_ / "lemma1.json"));
  EXPECT_EQ(l1["violations"], 0);
  EXPECT_TRUE(l1["passed"].get<bool>());
  const Json l3 = Json::parse(slurp(dir_ / "lemma3.json"));
  EXPECT_TRUE(l3.contains("e_tv_s1"));
}

}  // namespace
}  // namespace scmd
