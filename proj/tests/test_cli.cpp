// SPDX-FileCopyrightText: Copyright (c) 2026 The molflow Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "molflow/cli.hpp"
#include "molflow/diagnostics.hpp"
#include "molflow/train.hpp"

#include <sys/wait.h>

using namespace molflow;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("molflow_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  std::string write(const std::string& name, const json& j) const {
    std::ofstream(dir_ / name) << j.dump();
    return path(name);
  }

  // Two molecules with 3 conformers each.
  std::string gen_data() {
    const CliRun r = cli({"gen-data", "--template", "chain-5", "--template", "ring-4", "--conformers", "3",
                       "--seed", "4", "--out", path("data")});
    EXPECT_EQ(r.code, kExitOk) << r.err;
    return path("data/dataset.jsonl");
  }

  std::string tiny_config(std::size_t iterations) {
    return write("train.json", {{"iterations", iterations},
                                {"batch_size", 2},
                                {"checkpoint_every", 2},
                                {"model",
                                 {{"layers", 3},
                                  {"hidden", 4},
                                  {"coord_width", 4},
                                  {"blocks", 2},
                                  {"rounds", 1},
                                  {"fixed_steps", 2}}}});
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(cli({}).code, kExitInput);
  EXPECT_EQ(cli({"frobnicate"}).code, kExitInput);
  EXPECT_EQ(cli({"--help"}).code, kExitOk);
  EXPECT_EQ(cli({"gen-data", "--conformers", "x"}).code, kExitInput);
  EXPECT_EQ(cli({"check", "--level", "slow"}).code, kExitInput);
}

TEST_F(Cli, ToolBinaryReportsExitCodes) {
  const std::string tool = MOLFLOW_TOOL;
  int status = std::system((tool + " gen-data --template chain-4 --conformers 2 --out " + path("d") +
                            " > /dev/null")
                               .c_str());
  EXPECT_EQ(WEXITSTATUS(status), kExitOk);
  status = std::system((tool + " train --data " + path("missing.jsonl") + " --out " + path("t") +
                        " 2> /dev/null")
                           .c_str());
  EXPECT_EQ(WEXITSTATUS(status), kExitInput);
}

TEST_F(Cli, GenDataWritesDatasetAndResolvedConfig) {
  const std::string data = gen_data();
  const Dataset d = parse_dataset(fs::path(data));
  ASSERT_EQ(d.size(), 2u);
  for (const Molecule& m : d) EXPECT_EQ(m.conformers.size(), 3u);
  const json resolved = json::parse(slurp(path("data/resolved-config.json")));
  EXPECT_EQ(resolved["command"], "gen-data");
  EXPECT_EQ(resolved["conformers"], 3);
  EXPECT_EQ(resolved["templates"], json({"chain-5", "ring-4"}));
  EXPECT_EQ(cli({"gen-data", "--out", path("x")}).code, kExitInput);
  EXPECT_EQ(cli({"gen-data", "--template", "star-5", "--out", path("x")}).code, kExitInput);
  EXPECT_EQ(cli({"gen-data", "--template", "chain-5", "--conformers", "1", "--out", path("x")}).code,
            kExitInput);
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  const std::string cfg = write("gen.json", {{"templates", {"chain-4"}}, {"conformers", 4}});
  ASSERT_EQ(cli({"gen-data", "--config", cfg, "--out", path("a")}).code, kExitOk);
  EXPECT_EQ(parse_dataset(fs::path(path("a/dataset.jsonl")))[0].conformers.size(), 4u);
  ASSERT_EQ(cli({"gen-data", "--config", cfg, "--conformers", "2", "--out", path("b")}).code, kExitOk);
  EXPECT_EQ(parse_dataset(fs::path(path("b/dataset.jsonl")))[0].conformers.size(), 2u);
  const std::string wrong = write("wrong.json", {{"command", "eval"}, {"templates", {"chain-4"}}});
  EXPECT_EQ(cli({"gen-data", "--config", wrong, "--out", path("c")}).code, kExitInput);
}

TEST_F(Cli, TrainZeroIterations) {
  const std::string data = gen_data();
  const CliRun r = cli({"train", "--data", data, "--config", tiny_config(0), "--out", path("run")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_EQ(slurp(path("run/train_log.csv")), "iteration,nll_per_dim,ke,jf,grad_norm\n");
  EXPECT_TRUE(fs::exists(path("run/model.json")));
  const json resolved = json::parse(slurp(path("run/resolved-config.json")));
  EXPECT_EQ(resolved["train"]["iterations"], 0);
  EXPECT_EQ(resolved["train"]["model"]["hidden"], 4);
}

TEST_F(Cli, TrainSampleEvalPipelineIsDeterministic) {
  const std::string data = gen_data();
  const std::string cfg = tiny_config(4);
  for (const char* run : {"r1", "r2"}) {
    const std::string out = path(run);
    ASSERT_EQ(cli({"train", "--data", data, "--config", cfg, "--seed", "3", "--out", out}).code, kExitOk);
    ASSERT_EQ(cli({"sample", "--model", out + "/model.json", "--data", data, "--seed", "9", "--out",
                   out + "/samples"})
                  .code,
              kExitOk);
  }
  for (const char* f : {"train_log.csv", "model.json", "checkpoint-000002.json", "checkpoint-000004.json",
                        "samples/samples.jsonl"}) {
    EXPECT_EQ(slurp(path(std::string("r1/") + f)), slurp(path(std::string("r2/") + f))) << f;
  }
  std::istringstream log(slurp(path("r1/train_log.csv")));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) ++lines;
  EXPECT_EQ(lines, 5u);

  // default: 2 x reference conformers
  const Dataset samples = parse_dataset(fs::path(path("r1/samples/samples.jsonl")));
  ASSERT_EQ(samples.size(), 2u);
  for (const Molecule& m : samples) EXPECT_EQ(m.conformers.size(), 6u);

  // resume from a resolved config
  const CliRun again = cli({"train", "--config", path("r1/resolved-config.json"), "--out", path("r3")});
  ASSERT_EQ(again.code, kExitOk) << again.err;
  EXPECT_EQ(slurp(path("r1/model.json")), slurp(path("r3/model.json")));

  const CliRun ev = cli({"eval", "--generated", path("r1/samples/samples.jsonl"), "--reference", data,
                      "--mmd", "--out", path("r1/eval")});
  ASSERT_EQ(ev.code, kExitOk) << ev.err;
  const json scores = json::parse(slurp(path("r1/eval/scores.json")));
  EXPECT_EQ(scores["molecules"].size(), 2u);
  EXPECT_EQ(scores["mmd"].size(), 2u);
  EXPECT_TRUE(scores.contains("sampling"));
  EXPECT_NE(ev.out.find("COV-mean"), std::string::npos);
  EXPECT_EQ(slurp(path("r1/eval/scores.txt")), ev.out);
}

TEST_F(Cli, SampleCounts) {
  const std::string data = gen_data();
  ASSERT_EQ(cli({"train", "--data", data, "--config", tiny_config(0), "--out", path("run")}).code, kExitOk);
  const std::string model = path("run/model.json");
  ASSERT_EQ(cli({"sample", "--model", model, "--data", data, "--per-molecule", "4", "--out", path("a")}).code,
            kExitOk);
  for (const Molecule& m : parse_dataset(fs::path(path("a/samples.jsonl")))) EXPECT_EQ(m.conformers.size(), 4u);
  ASSERT_EQ(
      cli({"sample", "--model", model, "--data", data, "--times-reference", "1", "--out", path("b")}).code,
      kExitOk);
  for (const Molecule& m : parse_dataset(fs::path(path("b/samples.jsonl")))) EXPECT_EQ(m.conformers.size(), 3u);
  EXPECT_EQ(cli({"sample", "--model", model, "--data", data, "--per-molecule", "2", "--times-reference", "2",
                 "--out", path("c")})
                .code,
            kExitInput);
  EXPECT_EQ(cli({"sample", "--model", path("nope.json"), "--data", data, "--out", path("d")}).code,
            kExitInput);
}

TEST_F(Cli, TimesReferenceTwoGivesTen) {
  ASSERT_EQ(cli({"gen-data", "--template", "chain-4", "--conformers", "5", "--out", path("data")}).code,
            kExitOk);
  const std::string data = path("data/dataset.jsonl");
  ASSERT_EQ(cli({"train", "--data", data, "--config", tiny_config(0), "--out", path("run")}).code, kExitOk);
  ASSERT_EQ(cli({"sample", "--model", path("run/model.json"), "--data", data, "--times-reference", "2",
                 "--out", path("s")})
                .code,
            kExitOk);
  EXPECT_EQ(parse_dataset(fs::path(path("s/samples.jsonl")))[0].conformers.size(), 10u);
}

TEST_F(Cli, FailedDrawsSkipMolecule) {
  const std::string data = gen_data();
  FlowConfig fc = desk_flow_config();
  fc.layers = 3;
  fc.solver.fixed_step = false;
  fc.solver.max_steps = 1;
  fc.solver.rtol = fc.solver.atol = 1e-12;
  ConfFlowModel m(fc, compute_feature_stats(parse_dataset(fs::path(data))), 1);
  perturb_parameters(m.parameters(), 0.3, 2);
  const std::string model = write("bad.json", checkpoint_json(m, 0));
  const CliRun r = cli({"sample", "--model", model, "--data", data, "--out", path("s")});
  EXPECT_EQ(r.code, kExitPartialSampling);
  EXPECT_NE(r.err.find("skipping"), std::string::npos);
  EXPECT_TRUE(parse_dataset(fs::path(path("s/samples.jsonl"))).empty());
}

TEST_F(Cli, TrainDivergenceExitCode) {
  const std::string data = gen_data();
  const std::string cfg = write("wild.json", {{"iterations", 6},
                                              {"learning_rate", 1e4},
                                              {"clip", 1e6},
                                              {"model", {{"layers", 3}, {"hidden", 4}, {"coord_width", 4}}}});
  const CliRun r = cli({"train", "--data", data, "--config", cfg, "--out", path("run")});
  EXPECT_EQ(r.code, kExitDivergence) << r.out;
  EXPECT_NE(r.err.find("diverged"), std::string::npos);
}

TEST_F(Cli, EvalSelfComparison) {
  const std::string data = gen_data();
  const CliRun r = cli({"eval", "--generated", data, "--reference", data, "--out", path("e")});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const json j = json::parse(slurp(path("e/scores.json")));
  EXPECT_EQ(j["cov"]["mean"], 1.0);
  EXPECT_LT(j["mat"]["mean"].get<double>(), 1e-9);
  EXPECT_EQ(j["mis"]["mean"], 0.0);
  EXPECT_EQ(j["delta"], 0.5);
  EXPECT_EQ(j["heavy_only"], true);
  EXPECT_FALSE(j.contains("sampling"));
}

TEST_F(Cli, EvalAtomMasks) {
  Dataset d = parse_dataset(fs::path(gen_data()));
  for (Molecule& m : d) {
    m.graph.atoms.back().atomic_number = 1;
    m.graph.atoms.back().hybridization = Hybridization::None;
    for (Conformation& c : m.conformers) c.heavy_mask = heavy_mask(m.graph);
  }
  write_dataset(dir_ / "h.jsonl", d);
  const std::string h = path("h.jsonl");
  ASSERT_EQ(cli({"eval", "--generated", h, "--reference", h, "--out", path("a")}).code, kExitOk);
  ASSERT_EQ(cli({"eval", "--generated", h, "--reference", h, "--all-atoms", "--out", path("b")}).code, kExitOk);
  const json a = json::parse(slurp(path("a/scores.json")));
  const json b = json::parse(slurp(path("b/scores.json")));
  for (std::size_t k = 0; k < d.size(); ++k) {
    EXPECT_EQ(a["molecules"][k]["masked_atoms"], d[k].graph.atom_count() - 1);
    EXPECT_EQ(b["molecules"][k]["masked_atoms"], d[k].graph.atom_count());
  }
  EXPECT_EQ(b["heavy_only"], false);
  EXPECT_EQ(cli({"eval", "--generated", h, "--reference", h, "--all-atoms", "--heavy-only", "--out",
                 path("c")})
                .code,
            kExitInput);
}

TEST_F(Cli, EvalRejectsMismatchedInputs) {
  const std::string data = gen_data();
  ASSERT_EQ(cli({"gen-data", "--template", "chain-5", "--conformers", "3", "--out", path("other")}).code,
            kExitOk);
  EXPECT_EQ(cli({"eval", "--generated", path("other/dataset.jsonl"), "--reference", data, "--out",
                 path("e")})
                .code,
            kExitInput);
  EXPECT_EQ(cli({"eval", "--generated", path("none.jsonl"), "--reference", data, "--out", path("e")}).code,
            kExitInput);
  std::ofstream(dir_ / "broken.jsonl") << "{not json\n";
  EXPECT_EQ(cli({"eval", "--generated", path("broken.jsonl"), "--reference", data, "--out", path("e")}).code,
            kExitInput);
}

TEST_F(Cli, CheckFastListsEachCheckOnce) {
  const CliRun r = cli({"check", "--level", "fast", "--out", path("c")});
  EXPECT_EQ(r.code, kExitOk) << r.out;
  for (const char* name : {"roundtrip-tol1e-03", "roundtrip-tol1e-08", "trace-estimator",
                           "frobenius-estimator", "gradient-check", "permutation-equivariance",
                           "identity-at-init"}) {
    const std::string key = std::string(" ") + name + " ";
    const std::size_t first = r.out.find(key);
    ASSERT_NE(first, std::string::npos) << name;
    EXPECT_EQ(r.out.find(key, first + 1), std::string::npos) << name;
  }
  const json j = json::parse(slurp(path("c/checks.json")));
  EXPECT_EQ(j.size(), 7u);
}
