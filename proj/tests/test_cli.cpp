#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <regex>
#include <sys/wait.h>

#include "copt/config.hpp"
#include "copt/plot.hpp"
#include "test_util.hpp"
#include "train_fixture.hpp"

using namespace copt;
using copt::testing::slurp;
using copt::testing::TempDir;

namespace {

struct Result {
  int code;
  std::string out;
};

Result run_cli(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = std::string(COPT_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

// Every opened element is closed in order (self-closing tags allowed).
bool balanced_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::regex tag(R"(<(/?)([a-zA-Z][\w:-]*)[^>]*?(/?)>)");
  for (auto it = std::sregex_iterator(s.begin(), s.end(), tag); it != std::sregex_iterator(); ++it) {
    const auto& m = *it;
    if (m[3].length()) continue;
    if (m[1].length()) {
      if (stack.empty() || stack.back() != m[2].str()) return false;
      stack.pop_back();
    } else {
      stack.push_back(m[2].str());
    }
  }
  return stack.empty();
}

}  // namespace

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override { copt::testing::write_tiny_dataset(dir_ / "data", 4, 4, 2); }
  void write_config(const std::filesystem::path& path, std::size_t iterations) const {
    auto c = copt::testing::tiny_config(dir_ / "data", dir_ / "runs");
    c.iterations = iterations;
    std::ofstream(path) << serialize_config(c);
  }
  TempDir dir_{"cli"};
};

TEST_F(CliTest, UnknownFlagIsUsageAndExitTwo) {
  auto r = run_cli("train --no-such-flag", dir_ / "log");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("Usage"), std::string::npos);
  EXPECT_EQ(run_cli("", dir_ / "log").code, 2);
  EXPECT_EQ(run_cli("train --set bogus_key=1", dir_ / "log").code, 2);
}

TEST_F(CliTest, GenDataWritesLoadableDataset) {
  auto r = run_cli("gen-data --out " + (dir_ / "gen").string() + " --n-source 2 --n-target 3 --n-holdout 1 --size 32",
                   dir_ / "log");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto ds = load_dataset(dir_ / "gen");
  EXPECT_EQ(ds.ids(Domain::source).size(), 2u);
  EXPECT_EQ(ds.ids(Domain::target).size(), 3u);
  EXPECT_EQ(ds.ids(Domain::target, true).size(), 1u);
}

TEST_F(CliTest, TrainConfigHonorsEveryKey) {
  auto c = copt::testing::tiny_config(dir_ / "data", dir_ / "run");
  c.iterations = 3;
  c.seed = 4;
  c.copt_metric = CoptMetric::l1;
  c.membank_decay = 0.1;
  c.selftrain_strongaug = false;
  std::ofstream(dir_ / "run.cfg") << serialize_config(c);
  auto r = run_cli("train --config " + (dir_ / "run.cfg").string(), dir_ / "log");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(dir_ / "run/resolved.cfg"), serialize_config(c));

  // flags override the file
  r = run_cli("train --config " + (dir_ / "run.cfg").string() + " --iterations 2 --out " + (dir_ / "run2").string(),
              dir_ / "log");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto resolved = load_config_file(dir_ / "run2/resolved.cfg");
  EXPECT_EQ(resolved.iterations, 2u);
  EXPECT_EQ(resolved.copt_metric, CoptMetric::l1);
}

TEST_F(CliTest, EvalPrintsHeaderAndRow) {
  write_config(dir_ / "run.cfg", 2);
  ASSERT_EQ(run_cli("train --config " + (dir_ / "run.cfg").string(), dir_ / "log").code, 0);
  auto r = run_cli("eval --checkpoint " + (dir_ / "runs/final.ckpt").string() + " --data " + (dir_ / "data").string(),
                   dir_ / "log");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.rfind("iter,split,miou", 0), 0u);
  EXPECT_NE(r.out.find("\n2,target_val,"), std::string::npos);
}

TEST_F(CliTest, AblateMetricGivesThreeRows) {
  write_config(dir_ / "run.cfg", 2);
  auto r = run_cli("ablate --config " + (dir_ / "run.cfg").string() + " --axis metric --csv " +
                       (dir_ / "abl.csv").string(),
                   dir_ / "log");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto table = parse_csv(slurp(dir_ / "abl.csv"));
  ASSERT_EQ(table.rows.size(), 3u);
  EXPECT_EQ(table.rows[0][1], "cosine");
  EXPECT_EQ(table.rows[1][1], "l1");
  EXPECT_EQ(table.rows[2][1], "l2");
  EXPECT_EQ(run_cli("ablate --config " + (dir_ / "run.cfg").string() + " --axis colour", dir_ / "log").code, 2);
}

TEST_F(CliTest, PlotEmitsOnePolylinePerMetric) {
  write_config(dir_ / "run.cfg", 4);
  ASSERT_EQ(run_cli("train --config " + (dir_ / "run.cfg").string(), dir_ / "log").code, 0);
  auto r = run_cli("plot " + (dir_ / "runs/metrics.csv").string(), dir_ / "log");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto svg = slurp(dir_ / "runs/metrics.svg");
  EXPECT_EQ(svg.rfind("<?xml", 0), 0u);
  EXPECT_NE(svg.find("<svg xmlns"), std::string::npos);
  EXPECT_TRUE(balanced_xml(svg));
  // miou plus five per-class columns
  EXPECT_EQ(count(svg, "<polyline"), 6u);
  EXPECT_EQ(count(svg, "data-metric=\"miou\""), 1u);
}

TEST_F(CliTest, PromptsMatchGoldenFixture) {
  const auto golden = std::filesystem::path(COPT_SOURCE_DIR) / "data" / "golden";
  auto r = run_cli("prompts --classes " + (golden / "classes.txt").string() + " -o " + (dir_ / "p.txt").string(),
                   dir_ / "log");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(slurp(dir_ / "p.txt"), slurp(golden / "prompts_llm.txt"));
}

TEST_F(CliTest, EmbedHashCoversEveryPrompt) {
  write_config(dir_ / "run.cfg", 1);
  auto r = run_cli("embed-hash --config " + (dir_ / "run.cfg").string() + " --output " + (dir_ / "e.ctef").string(),
                   dir_ / "log");
  ASSERT_EQ(r.code, 0) << r.out;
  auto c = load_config_file(dir_ / "run.cfg");
  c.embedding = (dir_ / "e.ctef").string();
  std::ofstream(dir_ / "ctef.cfg") << serialize_config(c);
  r = run_cli("train --config " + (dir_ / "ctef.cfg").string(), dir_ / "log");
  EXPECT_EQ(r.code, 0) << r.out;
}
