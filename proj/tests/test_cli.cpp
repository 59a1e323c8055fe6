#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lex/lex.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using lex::json;

namespace {

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " " + LEX_CLI_PATH + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyConfig = R"({
  "preset": "invase",
  "dataset": {"name": "S3", "n_train": 200, "n_test": 100, "seed": 0},
  "model": {"predictor_hidden": [8], "selector_hidden": [8]},
  "estimator": {"L": 2},
  "train": {"epochs": 2, "batch_size": 50, "lr": 0.001, "pretrain_epochs": 1}
})";

class Cli : public ::testing::Test {
 protected:
  void SetUp() override { dir = lex::test::temp_dir("cli"); }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

}  // namespace

TEST_F(Cli, GenDataIsByteReproducible) {
  const std::string flags = "gen-data --dataset s3 --replicates 2 --n-train 100 --n-test 40 --seed 3 --out ";
  ASSERT_EQ(run(flags + (dir / "a").string()), 0);
  ASSERT_EQ(run(flags + (dir / "b").string()), 0);
  for (const char* f : {"S3_rep0_train.csv", "S3_rep1_test.csv", "manifest.json"})
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  auto ds = lex::load_dataset((dir / "a" / "S3_rep1_test.csv").string());
  EXPECT_EQ(ds.size(), 40u);
  EXPECT_EQ(read_json(dir / "a" / "manifest.json").at("files").size(), 4u);
}

TEST_F(Cli, DefaultsWriteFiveFullSizeReplicates) {
  ASSERT_EQ(run("gen-data --out " + (dir / "d").string()), 0);
  for (int r = 0; r < 5; ++r) {
    EXPECT_EQ(count_lines(dir / "d" / ("S3_rep" + std::to_string(r) + "_train.csv")), 10002u);
    EXPECT_EQ(count_lines(dir / "d" / ("S3_rep" + std::to_string(r) + "_test.csv")), 10002u);
  }
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("gen-data --no-such-flag --out " + dir.string()), 2);
  EXPECT_EQ(run("gen-data --dataset s9 --out " + dir.string()), 2);
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("gen-data --out /proc/lex-cannot-write"), 3);
  EXPECT_EQ(run("fit-imputer --kind gmm --data " + (dir / "missing.csv").string() + " --out " + dir.string()), 3);
  write(dir / "unknown.json", R"({"preset": "invase", "extra": 1})");
  EXPECT_EQ(run("train --config " + (dir / "unknown.json").string() + " --out " + (dir / "r").string()), 2);
}

TEST_F(Cli, NumericalAbortExitsWithFourAndPrintsDiagnostics) {
  auto cfg = json::parse(kTinyConfig);
  cfg["train"]["lr"] = 1e30;
  write(dir / "bad.json", cfg.dump());
  const std::string out = (dir / "log.txt").string();
  const std::string cmd = std::string(LEX_CLI_PATH) + " train --config " + (dir / "bad.json").string() + " --out " +
                          (dir / "run").string() + " >" + out + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 4);
  EXPECT_NE(slurp(out).find("diagnostics: "), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "diagnostics.json"));
}

TEST_F(Cli, FitImputerOneComponentGmmMatchesColumnStatistics) {
  ASSERT_EQ(run("gen-data --replicates 1 --n-train 300 --n-test 10 --out " + (dir / "d").string()), 0);
  const auto csv = dir / "d" / "S3_rep0_train.csv";
  ASSERT_EQ(run("fit-imputer --kind gmm --components 1 --data " + csv.string() + " --out " + (dir / "g").string()), 0);
  auto j = read_json(dir / "g" / "imputer.json");
  auto means = j.at("gmm").at("means").get<std::vector<double>>();
  auto vars = j.at("gmm").at("variances").get<std::vector<double>>();
  auto ds = lex::load_dataset(csv.string()).subset(lex::Split::train);
  for (std::size_t d = 0; d < ds.dim; ++d) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) m += ds.row(i)[d] / ds.size();
    for (std::size_t i = 0; i < ds.size(); ++i) v += (ds.row(i)[d] - m) * (ds.row(i)[d] - m) / ds.size();
    EXPECT_NEAR(means[d], m, 1e-9);
    EXPECT_NEAR(vars[d], v, 1e-9);
  }
  EXPECT_TRUE(fs::exists(dir / "g" / "fit_report.json"));
}

TEST_F(Cli, FitImputerConstantWritesATrivialSpec) {
  ASSERT_EQ(run("gen-data --replicates 1 --n-train 50 --n-test 10 --out " + (dir / "d").string()), 0);
  ASSERT_EQ(run("fit-imputer --kind constant --c 0 --data " + (dir / "d" / "S3_rep0_train.csv").string() + " --out " +
                (dir / "c").string()),
            0);
  auto j = read_json(dir / "c" / "imputer.json");
  EXPECT_EQ(j.at("kind"), "constant");
  EXPECT_EQ(j.at("spec").at("constant"), 0.0);
  EXPECT_FALSE(j.contains("gmm"));
}

TEST_F(Cli, FitImputerLogisticsReportsRisingLikelihood) {
  // grid-valued toy data: two clusters on {0..15}
  lex::Dataset ds{"grid", 0, 2, {}, {}, {}, {}};
  lex::Rng rng(4);
  for (int i = 0; i < 400; ++i) {
    const double c = (i % 2) ? 3 : 12;
    double x[2] = {std::clamp(std::round(c + 1.5 * lex::standard_normal(rng)), 0.0, 15.0),
                   std::clamp(std::round(c + 1.5 * lex::standard_normal(rng)), 0.0, 15.0)};
    std::uint8_t z[2] = {1, 1};
    ds.push_back(x, i % 2, z, lex::Split::train);
  }
  lex::save_dataset(ds, (dir / "grid.csv").string());
  ASSERT_EQ(run("fit-imputer --kind logistics --components 2 --data " + (dir / "grid.csv").string() + " --out " +
                (dir / "l").string()),
            0);
  auto trace = read_json(dir / "l" / "fit_report.json").at("loglik_trace").get<std::vector<double>>();
  ASSERT_GE(trace.size(), 11u);
  // 5-epoch block means; SGD noise near convergence is far below the slack
  auto block = [&](std::size_t b) {
    double s = 0;
    for (std::size_t i = 1 + 5 * b; i < 6 + 5 * b; ++i) s += trace[i];
    return s / 5;
  };
  for (std::size_t b = 1; 6 + 5 * b <= trace.size(); ++b) EXPECT_GE(block(b), block(b - 1) - 1e-3) << b;
  EXPECT_GT(trace.back(), trace.front());
}

TEST_F(Cli, TrainThenEvalRoundTrip) {
  write(dir / "cfg.json", kTinyConfig);
  const auto run_dir = dir / "run";
  ASSERT_EQ(run("train --config " + (dir / "cfg.json").string() + " --out " + run_dir.string()), 0);
  for (const char* f : {"run.json", "imputer.json", "manifest.json", "checkpoints/final.ckpt", "data/test.csv"})
    EXPECT_TRUE(fs::exists(run_dir / f)) << f;
  auto rec = lex::train::RunRecord::from_json(read_json(run_dir / "run.json"));
  EXPECT_EQ(rec.status, "ok");
  EXPECT_EQ(rec.config, lex::config::from_json(json::parse(kTinyConfig)));

  ASSERT_EQ(run("eval --run " + run_dir.string() + " --data " + (run_dir / "data" / "test.csv").string() +
                " --masks 10"),
            0);
  auto m = lex::eval::SelectionMetrics::from_json(read_json(run_dir / "eval" / "metrics.json"));
  EXPECT_EQ(m.n_instances, 100u);
  EXPECT_EQ(m.n_mask_samples, 10u);

  // same inputs, same outcome
  ASSERT_EQ(run("train --config " + (dir / "cfg.json").string() + " --out " + (dir / "again").string()), 0);
  auto rec2 = lex::train::RunRecord::from_json(read_json(dir / "again" / "run.json"));
  EXPECT_TRUE(rec.same_outcome(rec2));
}

TEST_F(Cli, SeedEnvironmentVariableOverridesConfig) {
  write(dir / "cfg.json", kTinyConfig);
  ASSERT_EQ(run("train --config " + (dir / "cfg.json").string() + " --out " + (dir / "s").string(), "LEX_SEED=17"), 0);
  auto rec = lex::train::RunRecord::from_json(read_json(dir / "s" / "run.json"));
  EXPECT_EQ(rec.config.train.seed, 17u);
  EXPECT_EQ(rec.config.data.seed, 17u);
}

TEST_F(Cli, EvalOfATrueMaskSelectorReportsUnitTpr) {
  // hand-built run directory: selector pinned to S3's x11 < 0 branch mask
  auto rc = lex::config::preset_config("invase");
  rc.lex.predictor.hidden_dims = {4};
  rc.lex.selector.hidden_dims = {4};
  lex::Rng rng(1);
  auto m = lex::model::init_model<float>(rc.lex, rng);
  const std::size_t last = rc.lex.selector.layer_count() - 1;
  for (auto& v : m.gamma.get(lex::diffnet::weight_name(last)).mutable_value().storage()) v = 0;
  auto& b = m.gamma.get(lex::diffnet::bias_name(last)).mutable_value();
  const double logits[11] = {-40, -40, 40, 40, 40, 40, -40, -40, -40, -40, 40};
  for (std::size_t d = 0; d < 11; ++d) b[d] = static_cast<float>(logits[d]);

  const auto run_dir = dir / "fixture";
  fs::create_directories(run_dir / "checkpoints");
  lex::train::save_checkpoint((run_dir / "checkpoints" / "final.ckpt").string(), m, lex::model::RegimeContext<float>{});
  lex::train::RunRecord rec;
  rec.config = rc;
  write(run_dir / "run.json", rec.to_json().dump());
  write(run_dir / "imputer.json", lex::impute::Imputer::make_stateless(rc.lex.imputer, 11).to_json().dump());

  auto all = lex::synth::gen_synthetic(lex::synth::Name::S3, 300, 5, lex::Split::test);
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (all.row(i)[10] < 0) keep.push_back(i);
  lex::save_dataset(all.rows(keep), (dir / "test.csv").string());

  ASSERT_EQ(run("eval --run " + run_dir.string() + " --data " + (dir / "test.csv").string()), 0);
  auto j = read_json(run_dir / "eval" / "metrics.json");
  EXPECT_NEAR(j.at("tpr").get<double>(), 1.0, 1e-12);
  EXPECT_NEAR(j.at("fdr").get<double>(), 0.0, 1e-12);
}

TEST_F(Cli, RatesSweepEmitsOneRowPerRun) {
  auto cfg = json::parse(kTinyConfig);
  cfg["train"]["epochs"] = 1;
  cfg["dataset"]["n_train"] = 100;
  cfg["dataset"]["n_test"] = 20;
  write(dir / "cfg.json", cfg.dump());
  ASSERT_EQ(run("sweep --config " + (dir / "cfg.json").string() + " --sweep rates --masks 2 --out " +
                (dir / "sw").string()),
            0);
  EXPECT_EQ(count_lines(dir / "sw" / "runs.csv"), 121u);       // 8 rates x 5 seeds x 3 imputers
  EXPECT_EQ(count_lines(dir / "sw" / "aggregate.csv"), 25u);   // 8 x 3 cells
  std::ifstream in(dir / "sw" / "runs.csv");
  std::string line;
  std::getline(in, line);
  std::size_t failed = 0;
  while (std::getline(in, line)) failed += line.find(",failed,") != std::string::npos;
  EXPECT_EQ(failed, 0u);
}

TEST_F(Cli, ConstantSweepCoversBothPresets) {
  auto cfg = json::parse(kTinyConfig);
  cfg["train"]["epochs"] = 1;
  cfg["dataset"]["n_train"] = 100;
  cfg["dataset"]["n_test"] = 20;
  write(dir / "cfg.json", cfg.dump());
  ASSERT_EQ(run("sweep --config " + (dir / "cfg.json").string() + " --sweep constant --seeds 1 --masks 2 --jobs 2 --out " +
                (dir / "sw").string()),
            0);
  const std::string agg = slurp(dir / "sw" / "aggregate.csv");
  EXPECT_EQ(count_lines(dir / "sw" / "aggregate.csv"), 41u);  // 20 constants x 2 presets
  EXPECT_NE(agg.find(",constant,"), std::string::npos);
  EXPECT_NE(agg.find(",surrogate_constant,"), std::string::npos);
}
