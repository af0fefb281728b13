#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <regex>
#include <sstream>
#include <unistd.h>

#include "cli.hpp"
#include "runner.hpp"
#include "udmt/eval_report.hpp"

namespace fs = std::filesystem;
using udmt::cli::read_text;
using udmt::cli::run_cli;
using udmt::cli::write_text;

namespace {

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> tiny_data_flags(const fs::path& dir) {
  return {"gen-data",       "--output",           dir.string(), "--v-general", "20", "--v-domain",    "10",
          "--min-len",      "3",                  "--max-len",  "6",           "--general-parallel", "200",
          "--general-dev",  "10",                 "--general-mono", "200",     "--domain-mono", "100",
          "--test",         "20"};
}

std::string dataset_hash(const std::string& out) {
  std::smatch m;
  EXPECT_TRUE(std::regex_search(out, m, std::regex("dataset hash: ([0-9a-f]{16})")));
  return m.size() > 1 ? m[1].str() : "";
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / fs::path("udmt_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    const auto r = cli(tiny_data_flags(root_ / "data"));
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = root_ / info->name();
    fs::create_directories(dir_);
  }

  // Tiny S4-style manifest; `extra` is spliced into the top-level object.
  fs::path manifest(const std::string& name, const std::string& extra) const {
    const auto path = dir_ / name;
    write_text(path, "{\"dataset\": \"" + (root_ / "data" / "manifest.json").string() + "\",\n"
                     " \"model\": {\"layers\": 1, \"d_model\": 16, \"heads\": 2, \"d_ff\": 32, \"max_seq_len\": 24, "
                     "\"dropout\": 0.1},\n"
                     " \"budgets\": {\"mass_pretrain\": 12, \"bt_pretrain\": 6, \"supervised\": 12, \"joint\": 12},\n"
                     " \"training\": {\"batch_size\": 8, \"lr\": 1e-3, \"warmup\": 10, \"eval_every\": 5},\n"
                     " \"seed\": 5,\n" +
                         extra + "}\n");
    return path;
  }

  static inline fs::path root_;
  fs::path dir_;
};

TEST_F(CliTest, GenDataFixedSeedGivesIdenticalHash) {
  const auto a = cli(tiny_data_flags(dir_ / "a"));
  const auto b = cli(tiny_data_flags(dir_ / "b"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  EXPECT_EQ(dataset_hash(a.out), dataset_hash(b.out));
  EXPECT_EQ(read_text(dir_ / "a" / "manifest.json"), read_text(dir_ / "b" / "manifest.json"));

  auto flags = tiny_data_flags(dir_ / "c");
  flags.insert(flags.end(), {"--seed", "2"});
  const auto c = cli(flags);
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_NE(dataset_hash(a.out), dataset_hash(c.out));
}

TEST_F(CliTest, GenDataStatsMatchFileLineCounts) {
  const auto r = cli(tiny_data_flags(dir_ / "d"));
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);  // header
  std::size_t rows = 0;
  while (std::getline(lines, line)) {
    std::istringstream fields(line);
    std::string file;
    std::size_t count = 0;
    if (!(fields >> file >> count) || file == "manifest:" || file == "dataset") continue;
    std::ifstream in(dir_ / "d" / file);
    std::size_t actual = 0;
    for (std::string l; std::getline(in, l);) ++actual;
    EXPECT_EQ(count, actual) << file;
    ++rows;
  }
  EXPECT_EQ(rows, 16u);
}

TEST_F(CliTest, GenDataRejectsZeroSizesAndBadFlags) {
  auto flags = tiny_data_flags(dir_ / "z");
  flags.back() = "0";
  EXPECT_EQ(cli(flags).code, 2);
  EXPECT_EQ(cli({"gen-data", "--output", (dir_ / "y").string(), "--bogus"}).code, 2);
  EXPECT_EQ(cli({"gen-data"}).code, 2);
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"gen-data", "-o", "x"}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);
}

TEST_F(CliTest, TrainS4WritesRunDirectory) {
  const auto m = manifest("s4.json", "\"config\": \"S4\", \"domains\": [\"A\"], \"output\": \"run\"");
  const auto r = cli({"train", "--manifest", m.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"manifest.json", "run.json", "stages.txt", "metrics.csv", "metrics.json", "stages.csv",
                        "progress.json", "tokenizer/vocab.txt", "stage1.ckpt", "stage2.ckpt", "stage3.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir_ / "run" / f)) << f;
  }
  EXPECT_FALSE(fs::exists(dir_ / "run" / "stage4.ckpt"));
  EXPECT_NE(read_text(dir_ / "run" / "run.json").find("udmt 0.1.0"), std::string::npos);
  EXPECT_NE(read_text(dir_ / "run" / "run.json").find("\"seed\": 5"), std::string::npos);

  // The stored manifest reproduces the run.
  const auto again = cli({"train", "--manifest", (dir_ / "run" / "manifest.json").string(), "--output",
                          (dir_ / "again").string()});
  ASSERT_EQ(again.code, 0) << again.err;
}

TEST_F(CliTest, RerunReproducesMetricsBitIdentically) {
  const auto m = manifest("s4.json", "\"config\": \"S4\", \"domains\": [\"A\"]");
  ASSERT_EQ(cli({"train", "--manifest", m.string(), "--output", (dir_ / "a").string()}).code, 0);
  ASSERT_EQ(cli({"train", "--manifest", m.string(), "--output", (dir_ / "b").string()}).code, 0);
  EXPECT_EQ(read_text(dir_ / "a" / "metrics.csv"), read_text(dir_ / "b" / "metrics.csv"));
  EXPECT_EQ(read_text(dir_ / "a" / "stage3.ckpt"), read_text(dir_ / "b" / "stage3.ckpt"));
}

TEST_F(CliTest, ResumeAfterStageTwoEqualsUninterruptedRun) {
  const auto m = manifest("s4.json", "\"config\": \"S4\", \"domains\": [\"A\"]");
  ASSERT_EQ(cli({"train", "--manifest", m.string(), "--output", (dir_ / "full").string()}).code, 0);
  const auto part = cli({"train", "--manifest", m.string(), "--output", (dir_ / "part").string(),
                         "--stop-after-stage", "2"});
  ASSERT_EQ(part.code, 0) << part.err;
  EXPECT_FALSE(fs::exists(dir_ / "part" / "stage3.ckpt"));

  const auto again = cli({"train", "--manifest", m.string(), "--output", (dir_ / "part").string()});
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.err.find("--resume"), std::string::npos);

  const auto resumed = cli({"train", "--manifest", m.string(), "--output", (dir_ / "part").string(), "--resume"});
  ASSERT_EQ(resumed.code, 0) << resumed.err;
  EXPECT_EQ(read_text(dir_ / "full" / "metrics.csv"), read_text(dir_ / "part" / "metrics.csv"));
  EXPECT_EQ(read_text(dir_ / "full" / "stages.csv"), read_text(dir_ / "part" / "stages.csv"));
  EXPECT_EQ(read_text(dir_ / "full" / "stage3.ckpt"), read_text(dir_ / "part" / "stage3.ckpt"));
}

TEST_F(CliTest, ResumeRejectsChangedManifest) {
  const auto m = manifest("s4.json", "\"config\": \"S4\", \"domains\": [\"A\"]");
  ASSERT_EQ(cli({"train", "--manifest", m.string(), "--output", (dir_ / "r").string(), "--stop-after-stage", "1"})
                .code,
            0);
  const auto other = manifest("s5.json", "\"config\": \"S5\", \"domains\": [\"A\"]");
  const auto r = cli({"train", "--manifest", other.string(), "--output", (dir_ / "r").string(), "--resume"});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("differs"), std::string::npos);
}

TEST_F(CliTest, DivergenceExitsOneAndReportsStep) {
  const auto m = manifest("nan.json", "\"config\": \"Baseline\", \"output\": \"run\"");
  auto text = read_text(m);
  text.replace(text.find("\"lr\": 1e-3"), 10, "\"lr\": 1e308");
  write_text(m, text);
  const auto r = cli({"train", "--manifest", m.string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(std::regex_search(r.err, std::regex("diverged at stage 1 step [0-9]+"))) << r.err;
}

TEST_F(CliTest, BadManifestsAreUsageErrors) {
  EXPECT_EQ(cli({"train", "--manifest", (dir_ / "missing.json").string()}).code, 2);
  const auto unknown = manifest("u.json", "\"config\": \"S4\", \"colour\": 1");
  EXPECT_EQ(cli({"train", "--manifest", unknown.string()}).code, 2);
  const auto bad_config = manifest("b.json", "\"config\": \"S9\"");
  EXPECT_EQ(cli({"train", "--manifest", bad_config.string()}).code, 2);
  const auto neither = manifest("n.json", "\"output\": \"x\"");
  EXPECT_EQ(cli({"train", "--manifest", neither.string()}).code, 2);
}

TEST_F(CliTest, ExplicitStagesRun) {
  const auto m = manifest("custom.json",
                          "\"stages\": [{\"name\": \"sup\", \"budget\": 6, \"tasks\": [{\"kind\": \"supervised\", "
                          "\"languages\": [\"src\", \"tgt\"]}]},"
                          "{\"name\": \"bt\", \"budget\": 4, \"tasks\": [{\"kind\": \"bt\", \"domain\": \"B\", "
                          "\"languages\": [\"tgt\"]}]}], \"output\": \"run\"");
  const auto r = cli({"train", "--manifest", m.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "run" / "stage2.ckpt"));
  EXPECT_NE(read_text(dir_ / "run" / "stages.txt").find("stage 2 bt budget=4 init=previous"), std::string::npos);
}

TEST_F(CliTest, AdaptPlansRunFromOneGeneralModel) {
  const auto g = manifest("g.json", "\"config\": \"Baseline\", \"output\": \"g\"");
  ASSERT_EQ(cli({"train", "--manifest", g.string()}).code, 0);
  const auto base = dir_ / "g" / "stage2.ckpt";
  const auto m = manifest("adapt.json", "\"plan\": \"A,B\", \"base_model\": \"g/stage2.ckpt\", \"output\": \"ab\"");

  const auto ab = cli({"adapt", "--manifest", m.string()});
  ASSERT_EQ(ab.code, 0) << ab.err;
  EXPECT_TRUE(fs::exists(dir_ / "ab" / "stage3.ckpt"));
  EXPECT_FALSE(fs::exists(dir_ / "ab" / "stage4.ckpt"));

  for (const auto& [plan, out] : {std::pair{"A>B", "a_b"}, std::pair{"B>A", "b_a"}}) {
    const auto r = cli({"adapt", "--manifest", m.string(), "--plan", plan, "--output", (dir_ / out).string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir_ / out / "stage3.ckpt"));
    EXPECT_TRUE(fs::exists(dir_ / out / "stage4.ckpt"));
    const auto metrics = udmt::cli::load_run_metrics(dir_ / out);
    for (std::uint64_t step : {0, 3, 4}) {
      for (const char* set : {"general", "A", "B"}) {
        EXPECT_NO_THROW(metrics.score_at("run", step, set)) << plan << " step " << step << " " << set;
      }
    }
  }
  EXPECT_NE(read_text(dir_ / "a_b" / "metrics.csv").find("adapt:A>B"), std::string::npos);
}

TEST_F(CliTest, AdaptFailures) {
  const auto m = manifest("adapt.json", "\"plan\": \"A\", \"base_model\": \"nowhere.ckpt\", \"output\": \"x\"");
  const auto missing = cli({"adapt", "--manifest", m.string()});
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("nowhere.ckpt"), std::string::npos);
  EXPECT_EQ(cli({"adapt", "--manifest", m.string(), "--plan", ""}).code, 2);
  const auto empty_plan = manifest("empty.json", "\"plan\": \"\", \"base_model\": \"nowhere.ckpt\"");
  EXPECT_EQ(cli({"adapt", "--manifest", empty_plan.string()}).code, 2);
  const auto with_config = manifest("c.json", "\"config\": \"S4\"");
  EXPECT_EQ(cli({"adapt", "--manifest", with_config.string(), "--plan", "A"}).code, 2);
}

TEST_F(CliTest, EvaluateMatchesTrainingScores) {
  const auto m = manifest("s4.json", "\"config\": \"S4\", \"domains\": [\"A\"], \"output\": \"run\"");
  ASSERT_EQ(cli({"train", "--manifest", m.string()}).code, 0);
  const auto csv = dir_ / "eval.csv";
  const auto r = cli({"evaluate", "--manifest", m.string(), "--checkpoint", (dir_ / "run" / "stage3.ckpt").string(),
                      "--tokenizer", (dir_ / "run" / "tokenizer").string(), "--csv", csv.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto evaluated = udmt::metrics_from_csv(read_text(csv));
  const auto trained = udmt::cli::load_run_metrics(dir_ / "run");
  for (const char* set : {"general", "A", "B"}) {
    EXPECT_EQ(evaluated.score_at("S4", 0, set), trained.score_at("S4", 3, set)) << set;
  }
  EXPECT_EQ(cli({"evaluate", "--manifest", m.string(), "--checkpoint", (dir_ / "none.ckpt").string()}).code, 1);
  EXPECT_EQ(cli({"evaluate", "--manifest", m.string(), "--checkpoint", (dir_ / "run" / "stage3.ckpt").string(),
                 "--test-set", "Z"})
                .code,
            2);
}

TEST_F(CliTest, CompareConfigsProducesOneRowPerConfig) {
  const auto base = manifest("base.json", "\"domains\": [\"A\"]");
  const auto r = cli({"compare-configs", "--base-manifest", base.string(), "--configs", "Baseline,S1,S2,S3,S4,S5,S6",
                      "--output", (dir_ / "cmp").string(), "--check-ordering", "--slack", "1000"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t rows = 0;
  for (const char* c : {"Baseline", "S1", "S2", "S3", "S4", "S5", "S6"}) {
    std::regex row(std::string("\\n[0-9]+ +") + c + " +" + c + " +[0-9.]+ \\([0-9.]+\\)");
    if (std::regex_search(r.out, row)) ++rows;
  }
  EXPECT_EQ(rows, 7u) << r.out;
  EXPECT_NE(r.out.find("ordering S4 >= S6"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "cmp" / "summary.json"));

  // Reuse loads the finished runs instead of training again.
  const auto reused = cli({"compare-configs", "--base-manifest", base.string(), "--configs", "S4", "--output",
                           (dir_ / "cmp").string(), "--reuse"});
  ASSERT_EQ(reused.code, 0) << reused.err;
  EXPECT_NE(reused.out.find("S4: reusing"), std::string::npos);
  EXPECT_EQ(reused.out.find("stage 1"), std::string::npos);
}

TEST_F(CliTest, CompareSingleConfigAndMixedDatasets) {
  const auto one = manifest("one.json", "\"config\": \"S4\", \"domains\": [\"A\"], \"output\": \"one\"");
  const auto r = cli({"compare-configs", "--manifest", one.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::regex_search(r.out, std::regex("\\n1 +S4 ")));
  EXPECT_FALSE(std::regex_search(r.out, std::regex("\\n2 ")));

  ASSERT_EQ(cli(tiny_data_flags(dir_ / "other")).code, 0);
  auto text = read_text(one);
  const auto data_path = (root_ / "data" / "manifest.json").string();
  text.replace(text.find(data_path), data_path.size(), (dir_ / "other" / "manifest.json").string());
  text.replace(text.find("\"one\""), 5, "\"two\"");
  text.replace(text.find("\"config\""), 0, "\"run_id\": \"two\", ");
  write_text(dir_ / "two.json", text);
  const auto mixed = cli({"compare-configs", "--manifest", one.string(), "--manifest", (dir_ / "two.json").string()});
  EXPECT_EQ(mixed.code, 2);
  EXPECT_NE(mixed.err.find("mixed datasets"), std::string::npos);
}

TEST(CliGradCheck, PassesByDefaultAndFlagsInjectedFault) {
  std::ostringstream out, err;
  EXPECT_EQ(run_cli({"grad-check"}, out, err), 0) << out.str();
  EXPECT_NE(out.str().find("transformer"), std::string::npos);

  std::ostringstream tight, tight_err;
  EXPECT_EQ(run_cli({"grad-check", "--threshold", "1e-5", "--kernels-only"}, tight, tight_err), 0) << tight.str();

  std::ostringstream faulty, faulty_err;
  EXPECT_EQ(run_cli({"grad-check", "--inject-fault"}, faulty, faulty_err), 1);
  EXPECT_NE(faulty.str().find("FAIL"), std::string::npos);

  std::ostringstream help, help_err;
  run_cli({"grad-check", "--help"}, help, help_err);
  EXPECT_EQ(help.str().find("inject-fault"), std::string::npos);
}

}  // namespace
