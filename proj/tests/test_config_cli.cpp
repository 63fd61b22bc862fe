// Copyright 2026 The CAGE-QAT Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

#include "test_support.hpp"

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#ifndef CAGE_CLI_PATH
#error "CAGE_CLI_PATH must point at the cage executable"
#endif

namespace cage {
namespace {

namespace fs = std::filesystem;

// -----------------------------------------------------------------------------
// Library-level config handling

TEST(ExperimentConfig, LoadSetAndSnapshot) {
  ExperimentConfig cfg("toy-pareto", default_settings("toy-pareto"));
  std::istringstream in("# a comment\nlambda = 1, 3   # trailing\n\n  steps=10\n");
  cfg.load(in);
  EXPECT_EQ(cfg.get_double_list("lambda"), (std::vector<double>{1, 3}));
  EXPECT_EQ(cfg.get_size("steps"), 10u);
  std::ostringstream snap;
  cfg.write_snapshot(snap);
  EXPECT_NE(snap.str().find("lambda = 1, 3"), std::string::npos);
  EXPECT_EQ(snap.str().rfind("# toy-pareto\n", 0), 0u);
}

TEST(ExperimentConfig, RejectsUnknownKeysAndBadValues) {
  ExperimentConfig cfg("quadratic", default_settings("quadratic"));
  EXPECT_THROW(cfg.set("kapa", "1"), ConfigError);
  std::istringstream no_eq("kappa 1\n");
  EXPECT_THROW(cfg.load(no_eq), ConfigError);
  cfg.set("dim", "6.5");
  EXPECT_THROW(cfg.get_size("dim"), ConfigError);
  cfg.set("dim", "1e2");
  EXPECT_EQ(cfg.get_size("dim"), 100u);
  cfg.set("traces", "maybe");
  EXPECT_THROW(cfg.get_bool("traces"), ConfigError);
  EXPECT_THROW(ExperimentConfig("x", default_settings("nope")), ConfigError);
}

TEST(ExperimentConfig, SeedLists) {
  ExperimentConfig cfg("quadratic", default_settings("quadratic"));
  EXPECT_EQ(cfg.get_seed_list("seed").size(), 10u);
  cfg.set("seed", "1,4-6");
  EXPECT_EQ(cfg.get_seed_list("seed"), (std::vector<std::uint64_t>{1, 4, 5, 6}));
  cfg.set("seed", "5-2");
  EXPECT_THROW(cfg.get_seed_list("seed"), ConfigError);
  cfg.set("seed", "");
  EXPECT_THROW(cfg.get_seed_list("seed"), ConfigError);
}

TEST(ParseQuant, Schemes) {
  const QuantSpec h = parse_quant("int-hadamard:4", 64);
  EXPECT_EQ(h.scheme, Scheme::IntHadamard);
  EXPECT_EQ(h.bits, 4);
  EXPECT_EQ(h.row_length, 64u);
  EXPECT_EQ(h.clip_factor, calibrated_clip_factor(4));
  EXPECT_EQ(parse_quant("int-plain:3", 8).bits, 3);
  EXPECT_EQ(parse_quant("mxfp4", 8).block_size, 32u);
  EXPECT_EQ(parse_quant("mxfp4:16", 8).block_size, 16u);
  EXPECT_EQ(parse_quant("floor:0.25", 8).grid_step, 0.25);
  EXPECT_EQ(parse_quant("none", 8).scheme, Scheme::Identity);
  EXPECT_THROW(parse_quant("int-plain:9", 8), ConfigError);
  EXPECT_THROW(parse_quant("int-plain:4.5", 8), ConfigError);
  EXPECT_THROW(parse_quant("floor:abc", 8), ConfigError);
  EXPECT_THROW(parse_quant("float8", 8), ConfigError);
}

TEST(DefaultSettings, ProduceValidConfigs) {
  EXPECT_NO_THROW(toy_pareto_config(ExperimentConfig("toy-pareto", default_settings("toy-pareto"))));
  const auto q = quadratic_config(ExperimentConfig("quadratic", default_settings("quadratic")));
  EXPECT_EQ(q.dim, 64u);
  EXPECT_EQ(q.steps, 2000u);
  EXPECT_EQ(q.seeds.size(), 10u);
  const auto c = convergence_config(ExperimentConfig("convergence", default_settings("convergence")));
  EXPECT_EQ(c.horizons, (std::vector<std::size_t>{100, 1000, 10000, 100000}));
  ExperimentConfig narrow("convergence", default_settings("convergence"));
  narrow.set("horizons", "100,300,1000,10000");
  EXPECT_NO_THROW(convergence_config(narrow));
  narrow.set("horizons", "100,200,400,800");
  EXPECT_THROW(convergence_config(narrow), ConfigError);
  narrow.set("horizons", "100,10000,1000000");
  EXPECT_THROW(convergence_config(narrow), ConfigError);
  ExperimentConfig bad("quadratic", default_settings("quadratic"));
  bad.set("opt", "rmsprop");
  EXPECT_THROW(quadratic_config(bad), ConfigError);
  bad = ExperimentConfig("quadratic", default_settings("quadratic"));
  bad.set("beta1", "1");
  EXPECT_THROW(quadratic_config(bad), ConfigError);
}

TEST(ParallelFor, CoversEveryIndexOnce) {
  for (std::size_t threads : {1u, 3u, 8u}) {
    std::vector<std::atomic<int>> hits(257);
    parallel_for(hits.size(), threads, [&](std::size_t i) { hits[i] += 1; });
    for (const auto& h : hits) ASSERT_EQ(h.load(), 1);
  }
}

TEST(ParallelFor, RethrowsLowestFailingIndex) {
  try {
    parallel_for(100, 4, [](std::size_t i) {
      if (i % 10 == 7) throw std::runtime_error(std::to_string(i));
    });
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_STREQ(e.what(), "7");
  }
}

TEST(Statistics, MeanAndSampleStd) {
  EXPECT_EQ(mean_of(std::vector<double>{1, 2, 3, 4}), 2.5);
  EXPECT_NEAR(stddev_of(std::vector<double>{1, 2, 3, 4}), std::sqrt(5.0 / 3.0), 1e-15);
  EXPECT_EQ(stddev_of(std::vector<double>{7}), 0.0);
  EXPECT_THROW(check_finite(std::vector<double>{1, NAN}, "t"), NumericalFailure);
}

// -----------------------------------------------------------------------------
// The command-line driver

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("cage_cli_" + std::string(info->name()) + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  int run(const std::string& args) {
    const std::string cmd = std::string(CAGE_CLI_PATH) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string slurp(const fs::path& p) const {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  nlohmann::json json(const fs::path& p) const { return nlohmann::json::parse(slurp(p)); }

  fs::path write(const std::string& name, const std::string& text) const {
    std::ofstream(dir_ / name, std::ios::binary) << text;
    return dir_ / name;
  }

  fs::path dir_;
};

TEST_F(Cli, ToyParetoReachesParetoPoints) {
  ASSERT_EQ(run("toy-pareto --lambda 1,3 --out " + (dir_ / "o").string()), 0);
  const auto j = json(dir_ / "o" / "summary.json");
  ASSERT_EQ(j["runs"].size(), 2u);
  EXPECT_NEAR(j["runs"][0]["final_x"].get<double>(), 0.25, 1e-6);
  EXPECT_NEAR(j["runs"][1]["final_x"].get<double>(), 0.125, 1e-6);
  EXPECT_TRUE(fs::exists(dir_ / "o" / "trace_lambda_1.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "o" / "config.txt"));
}

TEST_F(Cli, ToyParetoWithoutCorrectionKeepsSteResidual) {
  ASSERT_EQ(run("toy-pareto --lambda 0 --out " + (dir_ / "o").string()), 0);
  const auto r = json(dir_ / "o" / "summary.json")["runs"][0];
  EXPECT_GE(std::abs(r["ste_grad"].get<double>()), 0.5 - 1e-12);
  EXPECT_GT(r["final_x"].get<double>(), 0.5);
}

TEST_F(Cli, RerunsAreByteIdentical) {
  const std::string out = (dir_ / "o").string();
  ASSERT_EQ(run("quadratic --seed 0-1 --steps 100 --out " + out), 0);
  const std::string a = slurp(dir_ / "o" / "summary.json");
  const std::string ta = slurp(dir_ / "o" / "trajectory_kappa_10_adamw.csv");
  ASSERT_EQ(run("quadratic --seed 0-1 --steps 100 --out " + out), 0);
  EXPECT_EQ(a, slurp(dir_ / "o" / "summary.json"));
  EXPECT_EQ(ta, slurp(dir_ / "o" / "trajectory_kappa_10_adamw.csv"));
  ASSERT_EQ(run("calibrate-clip --out " + out), 0);
  const std::string clip = slurp(dir_ / "o" / "clip_factors.tsv");
  ASSERT_EQ(run("calibrate-clip --out " + out), 0);
  EXPECT_EQ(clip, slurp(dir_ / "o" / "clip_factors.tsv"));
}

TEST_F(Cli, ThreadCountDoesNotChangeOutput) {
  const auto cfg1 = write("t1.cfg", "threads = 1\n");
  const auto cfg4 = write("t4.cfg", "threads = 4\n");
  ASSERT_EQ(run("quadratic --seed 0-3 --steps 100 --config " + cfg1.string() + " --out " + (dir_ / "a").string()), 0);
  ASSERT_EQ(run("quadratic --seed 0-3 --steps 100 --config " + cfg4.string() + " --out " + (dir_ / "b").string()), 0);
  EXPECT_EQ(slurp(dir_ / "a" / "final_gaps.csv"), slurp(dir_ / "b" / "final_gaps.csv"));
}

TEST_F(Cli, QuadraticSanityLane) {
  const auto cfg = write("q.cfg", "kappa = 1\nquant = none\nopt = sgd\nseed = 0-2\nsteps = 200\n");
  ASSERT_EQ(run("quadratic --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0);
  for (const auto& r : json(dir_ / "o" / "summary.json")["runs"]) EXPECT_LT(r["final_gap"].get<double>(), 1e-10);
}

TEST_F(Cli, TrajectoryCsvShape) {
  ASSERT_EQ(run("quadratic --seed 0 --steps 150 --out " + (dir_ / "o").string()), 0);
  std::ifstream in(dir_ / "o" / "trajectory_kappa_100_cage-adamw-dec.csv");
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "pc1,pc2");
  int rows = 0;
  while (std::getline(in, line)) {
    ++rows;
    ASSERT_EQ(std::count(line.begin(), line.end(), ','), 1) << line;
  }
  EXPECT_EQ(rows, 150);
}

TEST_F(Cli, ValidationErrorsExitTwo) {
  EXPECT_EQ(run("calibrate-clip --out " + (dir_ / "o").string() + " --config " +
                write("b.cfg", "bits = 9\n").string()),
            2);
  EXPECT_EQ(run("quadratic --quant int-plain:9 --out " + (dir_ / "o").string()), 2);
  EXPECT_EQ(run("quadratic --opt rmsprop --out " + (dir_ / "o").string()), 2);
  EXPECT_EQ(run("toy-pareto --config " + write("u.cfg", "bogus = 1\n").string()), 2);
  EXPECT_EQ(run("toy-pareto --opt sgd --out " + (dir_ / "o").string()), 2);
  EXPECT_EQ(run("toy-pareto --config " + (dir_ / "missing.cfg").string()), 2);
  EXPECT_EQ(run("--no-such-flag"), 2);
  EXPECT_EQ(run(""), 2);
}

TEST_F(Cli, DivergenceExitsThreeAndKeepsSnapshot) {
  const auto cfg = write("nan.cfg", "kappa = 100\nquant = none\nopt = sgd\nsgd_lr = 10\nseed = 0\nsteps = 2000\n");
  EXPECT_EQ(run("quadratic --config " + cfg.string() + " --out " + (dir_ / "o").string()), 3);
  const std::string snap = slurp(dir_ / "o" / "config.txt");
  EXPECT_NE(snap.find("sgd_lr = 10"), std::string::npos);
}

TEST_F(Cli, FlagsOverrideConfigFile) {
  const auto cfg = write("p.cfg", "lambda = 2\nsteps = 3000\n");
  ASSERT_EQ(run("toy-pareto --config " + cfg.string() + " --lambda 3 --out " + (dir_ / "o").string()), 0);
  const auto j = json(dir_ / "o" / "summary.json");
  EXPECT_EQ(j["config"]["lambda"], "3");
  EXPECT_EQ(j["config"]["steps"], "3000");
  EXPECT_EQ(j["runs"].size(), 1u);
  EXPECT_EQ(j["runs"][0]["lambda"].get<double>(), 3.0);
}

std::string scaling_csv(const std::vector<ScalingDatum>& data) {
  std::ostringstream os;
  os << "method,P,N,D,loss\n";
  for (const auto& d : data)
    os << d.method << ',' << d.precision << ',' << format_double(d.N) << ',' << format_double(d.D) << ','
       << format_double(d.loss) << '\n';
  return os.str();
}

TEST_F(Cli, FitScalingRecoversGenerator) {
  const testing::ScalingTruth truth;
  const auto csv = write("pts.csv", scaling_csv(testing::synthetic_scaling(truth, 0.005, 0)));
  const auto cfg = write("f.cfg", "input = " + csv.string() + "\n");
  ASSERT_EQ(run("fit-scaling --config " + cfg.string() + " --out " + (dir_ / "o").string()), 0);
  const auto j = json(dir_ / "o" / "fit.json");
  EXPECT_LE(testing::rel_err(j["A"].get<double>(), truth.A), 0.10);
  EXPECT_LE(testing::rel_err(j["alpha"].get<double>(), truth.alpha), 0.10);
  EXPECT_LE(testing::rel_err(j["B"].get<double>(), truth.B), 0.10);
  EXPECT_LE(testing::rel_err(j["beta"].get<double>(), truth.beta), 0.10);
  EXPECT_LE(testing::rel_err(j["E"].get<double>(), truth.E), 0.10);
  for (const auto& e : j["eff"]) {
    const EffKey key{e["method"], e["P"]};
    const auto it = std::find_if(truth.groups.begin(), truth.groups.end(), [&](auto& g) { return g.first == key; });
    ASSERT_NE(it, truth.groups.end());
    EXPECT_NEAR(e["eff"].get<double>(), it->second, 0.05);
  }
  // Printed eff table is sorted by (method, P).
  const std::string out = slurp(dir_ / "stdout.txt");
  EXPECT_LT(out.find("base\tFP"), out.find("ste\t2"));
  EXPECT_LT(out.find("ste\t2"), out.find("ste\t4"));
}

TEST_F(Cli, FitScalingFullPrecisionOnly) {
  testing::ScalingTruth t;
  t.groups = {{{"base", "FP"}, 1.0}};
  const auto csv = write("fp.csv", scaling_csv(testing::synthetic_scaling(t, 0.0, 0)));
  ASSERT_EQ(run("fit-scaling --config " + write("f.cfg", "input = " + csv.string() + "\n").string() + " --out " +
                (dir_ / "o").string()),
            0);
  const auto eff = json(dir_ / "o" / "fit.json")["eff"];
  ASSERT_EQ(eff.size(), 1u);
  EXPECT_EQ(eff[0]["P"], "FP");
  EXPECT_EQ(eff[0]["eff"].get<double>(), 1.0);
}

TEST_F(Cli, FitScalingRejectsBadInput) {
  auto data = testing::synthetic_scaling(testing::ScalingTruth{}, 0.0, 0);
  std::erase_if(data, [](const ScalingDatum& d) { return d.is_full_precision(); });
  const auto no_fp = write("nofp.csv", scaling_csv(data));
  EXPECT_EQ(run("fit-scaling --config " + write("a.cfg", "input = " + no_fp.string() + "\n").string() + " --out " +
                (dir_ / "o").string()),
            2);
  const auto broken = write("broken.csv", "method,P,N,D,loss\nbase,FP,1e6,1e9,2.5\nbase,FP,1e7\n");
  EXPECT_EQ(run("fit-scaling --config " + write("b.cfg", "input = " + broken.string() + "\n").string() +
                " --out " + (dir_ / "o").string()),
            2);
  EXPECT_NE(slurp(dir_ / "stderr.txt").find("line 3"), std::string::npos);
  EXPECT_EQ(run("fit-scaling --out " + (dir_ / "o").string()), 2);
}

}  // namespace
}  // namespace cage
