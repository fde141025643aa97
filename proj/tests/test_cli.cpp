#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "flexmig/flexmig.hpp"

namespace fs = std::filesystem;
using namespace flexmig;

namespace {

const fs::path kSamples = FLEXMIG_SAMPLES_DIR;

struct Outcome {
  int code = -1;
  std::string out;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("flexmig_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  Outcome run(const std::string& args) {
    const auto log = dir_ / "stdout.txt";
    const std::string cmd = std::string(FLEXMIG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, exp::read_file(log)};
  }

  fs::path write(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenTraceBalancedMixed) {
  const auto out = dir_ / "t.jsonl";
  const auto r = run("gen-trace " + (kSamples / "trace_balanced_mixed.json").string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("wrote 62 jobs"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("inference size 4: 10"), std::string::npos) << r.out;
  const auto trace = workload::parse_trace(exp::read_file(out));
  EXPECT_EQ(trace.jobs.size(), 62u);
}

TEST_F(Cli, GenTraceDeterministicAndSeedOverride) {
  const auto cfg = (kSamples / "trace_balanced_mixed.json").string();
  ASSERT_EQ(run("gen-trace " + cfg + " --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run("gen-trace " + cfg + " --out " + (dir_ / "b").string()).code, 0);
  ASSERT_EQ(run("gen-trace " + cfg + " --seed 8 --out " + (dir_ / "c").string()).code, 0);
  EXPECT_EQ(exp::read_file(dir_ / "a"), exp::read_file(dir_ / "b"));
  EXPECT_NE(exp::read_file(dir_ / "a"), exp::read_file(dir_ / "c"));
}

TEST_F(Cli, GenTraceRejectsBadSizeMix) {
  const auto cfg = write("bad.json", R"({"size_mix": "tiny", "type_mix": "train-only"})");
  const auto r = run("gen-trace " + cfg.string() + " --out " + (dir_ / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("tiny"), std::string::npos) << r.out;
  EXPECT_EQ(run("gen-trace").code, 2);
  EXPECT_EQ(run("frobnicate").code, 2);
}

TEST_F(Cli, RunWritesLogMetricsAndCsv) {
  const auto trace = dir_ / "t.jsonl";
  ASSERT_EQ(run("gen-trace " + (kSamples / "trace_balanced_mixed.json").string() + " --out " + trace.string()).code, 0);
  for (const auto* mode : {"FM", "DM"}) {
    const auto out = dir_ / mode;
    const auto r = run("run " + trace.string() + " --mode " + mode + " --perf-model " +
                       (kSamples / "perf_model.json").string() + " --out " + out.string());
    ASSERT_EQ(r.code, 0) << r.out;
    const auto metrics = nlohmann::ordered_json::parse(exp::read_file(out / "metrics.json"));
    EXPECT_NO_THROW(sim::validate_metrics_json(metrics));
    ASSERT_TRUE(metrics.contains("reconfig_count"));
    if (std::string(mode) == "FM") EXPECT_EQ(metrics.at("reconfig_count"), 0);
    const auto log = sim::parse_log(exp::read_file(out / "events.jsonl"));
    EXPECT_EQ(sim::to_json(sim::compute_metrics(log)).dump(), metrics.dump());
    const auto csv = exp::parse_csv(exp::read_file(out / "metrics.csv"));
    ASSERT_EQ(csv.rows.size(), 1u);
    EXPECT_EQ(csv.rows[0][csv.column("mode")], mode);
    EXPECT_EQ(sim::parse_number(csv.rows[0][csv.column("makespan_s")]),
              metrics.at("makespan_s").get<double>());
  }
}

TEST_F(Cli, RunStaticMigRejectsLargeJobs) {
  const auto trace = dir_ / "t.jsonl";
  ASSERT_EQ(run("gen-trace " + (kSamples / "trace_large_train.json").string() + " --out " + trace.string()).code, 0);
  const auto r = run("run " + trace.string() + " --mode SM --out " + (dir_ / "sm").string());
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_EQ(run("run " + trace.string() + " --mode XM --out " + (dir_ / "x").string()).code, 2);
  EXPECT_EQ(run("run " + trace.string() + " --policy backfill --backfill-depth 0").code, 2);
  EXPECT_EQ(run("run " + (dir_ / "missing.jsonl").string()).code, 1);
  const auto bad = write("bad.jsonl", "{\"job_id\": 1}\n");
  EXPECT_EQ(run("run " + bad.string()).code, 2);
}

TEST_F(Cli, SweepRerunIsByteIdenticalAndReportMatches) {
  const auto spec = write("spec.json", R"({
    "trace_configs": [
      {"size_mix": "small-dominant", "type_mix": "train-only"},
      {"size_mix": "balanced", "type_mix": "train-only"},
      {"size_mix": "large-dominant", "type_mix": "train-only"}
    ],
    "modes": ["FM", "DM"],
    "policy": "fifo",
    "seeds": [0, 1, 2, 3, 4, 5, 6, 7, 8, 9]
  })");
  const auto a = dir_ / "a", b = dir_ / "b";
  auto r = run("sweep " + spec.string() + " --out " + a.string() + " --workers 2");
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_EQ(run("sweep " + spec.string() + " --out " + b.string() + " --workers 1").code, 0);
  EXPECT_EQ(exp::read_file(a / "runs.csv"), exp::read_file(b / "runs.csv"));
  EXPECT_EQ(exp::read_file(a / "summary.csv"), exp::read_file(b / "summary.csv"));

  const auto runs = exp::parse_csv(exp::read_file(a / "runs.csv"));
  EXPECT_EQ(runs.rows.size(), 60u);
  EXPECT_EQ(runs.header, exp::runs_header());
  const auto summary = exp::parse_csv(exp::read_file(a / "summary.csv"));
  std::map<std::string, int> ratio_rows;
  for (const auto& row : summary.rows) {
    if (row[summary.column("comparison")] == "FM/DM") ++ratio_rows[row[summary.column("metric")]];
  }
  for (const auto& m : exp::ratio_metrics()) EXPECT_EQ(ratio_rows[m], 3) << m;
  EXPECT_EQ(std::distance(fs::directory_iterator(a / "runs"), fs::directory_iterator{}), 60);

  ASSERT_EQ(run("report " + (a / "runs.csv").string() + " --out " + (dir_ / "re.csv").string()).code, 0);
  EXPECT_EQ(exp::read_file(dir_ / "re.csv"), exp::read_file(a / "summary.csv"));
}

TEST_F(Cli, SingleModeSweepHasNoRatios) {
  const auto spec = write("spec.json", R"({
    "trace_configs": [{"size_mix": "balanced", "type_mix": "inference-only"}],
    "modes": ["SM"], "policy": {"kind": "backfill", "depth": 14}, "seeds": [1, 2]
  })");
  ASSERT_EQ(run("sweep " + spec.string() + " --out " + (dir_ / "o").string()).code, 0);
  const auto summary = exp::parse_csv(exp::read_file(dir_ / "o" / "summary.csv"));
  ASSERT_FALSE(summary.rows.empty());
  for (const auto& row : summary.rows) {
    EXPECT_EQ(row[summary.column("comparison")].find('/'), std::string::npos);
  }
  const auto runs = exp::parse_csv(exp::read_file(dir_ / "o" / "runs.csv"));
  EXPECT_EQ(runs.rows[0][runs.column("policy")], "backfill");
  EXPECT_EQ(runs.rows[0][runs.column("depth")], "14");
}

TEST_F(Cli, SweepSkipsStaticMigForLargeJobsAndReportsFailures) {
  const auto spec = write("spec.json", R"({
    "trace_configs": [{"size_mix": "large-dominant", "type_mix": "train-only"}],
    "modes": ["FM", "SM"], "seeds": [0], "num_gpus": 1
  })");
  const auto r = run("sweep " + spec.string() + " --out " + (dir_ / "o").string());
  // SM is skipped with a warning; FM cannot host size-8 jobs on one GPU.
  EXPECT_EQ(r.code, 4) << r.out;
  EXPECT_NE(r.out.find("skipping SM"), std::string::npos) << r.out;
  const auto failures = exp::read_file(dir_ / "o" / "failures.csv");
  EXPECT_NE(failures.find("TraceInvalidForMode"), std::string::npos) << failures;
}

TEST_F(Cli, SweepRejectsInvalidSpec) {
  const auto spec = write("spec.json", R"({"trace_configs": [{"size_mix": "balanced", "type_mix": "train-only"}], "modes": [], "seeds": [0]})");
  EXPECT_EQ(run("sweep " + spec.string()).code, 2);
  const auto dup = write("dup.json", R"({"trace_configs": [{"size_mix": "balanced", "type_mix": "train-only"}], "modes": ["FM"], "seeds": [0, 0]})");
  EXPECT_EQ(run("sweep " + dup.string()).code, 2);
}

TEST_F(Cli, BootstrapCheck) {
  const auto peers = (kSamples / "peers_shared_gpu.jsonl").string();
  const auto r = run("bootstrap-check " + peers);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("00:4B:00.1"), std::string::npos);
  EXPECT_NE(r.out.find("00:4B:00.2"), std::string::npos);
  EXPECT_NE(r.out.find("SHM"), std::string::npos);
  const auto legacy = run("bootstrap-check --legacy " + peers);
  EXPECT_EQ(legacy.code, 2);
  EXPECT_NE(legacy.out.find("DuplicateDevice"), std::string::npos) << legacy.out;
}
