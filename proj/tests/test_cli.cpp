#include <gtest/gtest.h>

#include <sstream>

#include "wforge/pipeline.hpp"

using namespace wforge;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const fs::path& p) {
  auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

int run_binary(const std::string& args, std::string* output = nullptr) {
  fs::path log = fs::temp_directory_path() / ("wforge_cli_" + std::to_string(::getpid()) + ".log");
  int rc = std::system((std::string(WFORGE_CLI) + " " + args + " >" + log.string() + " 2>&1").c_str());
  if (output) *output = slurp(log);
  fs::remove(log);
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("wforge_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  PipelineConfig base() const {
    PipelineConfig c;
    c.workdir = dir / "work";
    c.seed = 11;
    c.trace = (dir / "trace.csv").string();
    c.catalog = (dir / "sites.json").string();
    c.diffusion.hidden = {32, 32};
    c.diffusion.emb_dim = 8;
    c.diffusion.timesteps = 20;
    c.train.steps = 20;
    c.train.batch_size = 64;
    c.regressor.iterations = 10;
    c.regressor.max_depth = 4;
    return c;
  }

  int run(const std::string& cmd, const PipelineConfig& c, std::string* out = nullptr, std::string* err = nullptr) {
    std::ostringstream o, e;
    int rc = run_command(cmd, c, o, e);
    if (out) *out = o.str();
    if (err) *err = e.str();
    return rc;
  }

  void mock_inputs(std::size_t n) {
    auto c = base();
    c.n = n;
    c.out = (dir / "jobs.csv").string();
    ASSERT_EQ(run("mock", c), 0);
  }

  fs::path dir;
};

}  // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_binary("mock --n 0 --workdir " + dir.string()), 2);
  EXPECT_EQ(run_binary("mock --bogus"), 2);
  EXPECT_EQ(run_binary("train --model gan --workdir " + dir.string()), 2);
  EXPECT_EQ(run_binary(""), 2);
  EXPECT_EQ(run_binary("--help"), 0);
  std::ofstream(dir / "bad.json") << R"({"diffusion": {"stepz": 3}})";
  std::string out;
  EXPECT_EQ(run_binary("train --config " + (dir / "bad.json").string() + " --workdir " + dir.string(), &out), 2);
  EXPECT_NE(out.find("diffusion.stepz"), std::string::npos);
}

TEST_F(Cli, MockLineCountAndRerunIdentical) {
  auto out = dir / "data.csv";
  auto args = "mock --n 3000 --seed 7 --workdir " + dir.string() + " --out " + out.string();
  ASSERT_EQ(run_binary(args), 0);
  EXPECT_EQ(line_count(out), 3001u);
  auto first = slurp(out);
  ASSERT_EQ(run_binary(args), 0);
  EXPECT_EQ(slurp(out), first);
  EXPECT_TRUE(fs::exists(dir / "config.mock.json"));
  EXPECT_FALSE(fs::exists(dir / ".workload_forge.lock"));
}

TEST_F(Cli, UnwritableOutputExitsOne) {
  auto c = base();
  c.n = 10;
  c.out = (dir / "missing" / "sub" / "x.csv").string();
  std::string err;
  EXPECT_EQ(run("mock", c, nullptr, &err), 1);
  EXPECT_NE(err.find("x.csv"), std::string::npos);
}

TEST_F(Cli, ConfigFilePrecedence) {
  std::ofstream(dir / "cfg.json") << R"({"seed": 3, "n": 50, "mock": {"noise_sigma": 0.1}})";
  auto a = dir / "a.csv", b = dir / "b.csv";
  ASSERT_EQ(run_binary("mock --config " + (dir / "cfg.json").string() + " --n 70 --workdir " + dir.string() + " --out " + a.string()), 0);
  EXPECT_EQ(line_count(a), 71u);
  auto echoed = nlohmann::json::parse(slurp(dir / "config.mock.json"));
  EXPECT_EQ(echoed["seed"], 3);
  EXPECT_EQ(echoed["n"], 70);
  EXPECT_EQ(echoed["mock"]["noise_sigma"], 0.1);
  auto p = MockProfile::defaults();
  p.noise_sigma = 0.1;
  write_table_file(b.string(), generate_mock_table(p, 70, 3));
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST_F(Cli, LockFileBlocksConcurrentRun) {
  auto c = base();
  c.n = 10;
  fs::create_directories(c.workdir);
  std::ofstream(c.workdir / ".workload_forge.lock") << "1\n";
  std::string err;
  EXPECT_EQ(run("mock", c, nullptr, &err), 1);
  EXPECT_NE(err.find("locked"), std::string::npos);
}

TEST_F(Cli, IngestFunnelAndSplit) {
  mock_inputs(2000);
  auto c = base();
  ASSERT_EQ(run("ingest", c), 0);
  auto funnel = nlohmann::json::parse(slurp(c.workdir / "funnel.json"));
  std::size_t prev = std::numeric_limits<std::size_t>::max();
  for (const auto& s : funnel["stages"]) {
    EXPECT_LE(s["count"].get<std::size_t>(), prev);
    prev = s["count"];
  }
  EXPECT_EQ(prev, 2000u);
  EXPECT_EQ(line_count(c.workdir / "train.csv"), 1601u);
  EXPECT_EQ(line_count(c.workdir / "test.csv"), 401u);
}

TEST_F(Cli, IngestWithoutDaodRowsWarns) {
  mock_inputs(200);
  auto text = slurp(dir / "trace.csv");
  for (std::size_t at; (at = text.find(".DAOD_")) != std::string::npos;) text.replace(at, 6, ".AOD_");
  std::ofstream(dir / "trace.csv", std::ios::binary) << text;
  auto c = base();
  std::string err;
  ASSERT_EQ(run("ingest", c, nullptr, &err), 0);
  EXPECT_NE(err.find("warning"), std::string::npos);
  EXPECT_EQ(line_count(c.workdir / "train.csv"), 1u);
  EXPECT_EQ(line_count(c.workdir / "test.csv"), 1u);
}

TEST_F(Cli, IngestMissingSiteNamesIt) {
  mock_inputs(300);
  auto sites = nlohmann::json::parse(slurp(dir / "sites.json"));
  sites.erase("BNL");
  std::ofstream(dir / "sites.json") << sites.dump();
  std::string err;
  EXPECT_EQ(run("ingest", base(), nullptr, &err), 1);
  EXPECT_NE(err.find("BNL"), std::string::npos);
  EXPECT_EQ(run("ingest", [&] { auto c = base(); c.catalog.reset(); return c; }()), 2);
}

TEST_F(Cli, SmoteTrainGenerateEvaluate) {
  mock_inputs(1500);
  auto c = base();
  ASSERT_EQ(run("ingest", c), 0);
  ASSERT_EQ(run("train", c), 0);
  c.n = 300;
  ASSERT_EQ(run("generate", c), 0);
  auto synth = read_job_table((c.workdir / "synth.csv").string());
  EXPECT_EQ(synth.rows(), 300u);
  auto header = [](const fs::path& p) { return slurp(p).substr(0, slurp(p).find('\n')); };
  EXPECT_EQ(header(c.workdir / "synth.csv"), header(c.workdir / "train.csv"));
  auto train = read_job_table((c.workdir / "train.csv").string());
  for (std::size_t col = 0; col < train.cols(); ++col) {
    if (train.schema().features[col].kind != FeatureKind::categorical) continue;
    std::set<std::string> vocab(train.labels(col).begin(), train.labels(col).end());
    for (const auto& v : synth.labels(col)) EXPECT_TRUE(vocab.count(v)) << v;
  }
  auto first = slurp(c.workdir / "synth.csv");
  ASSERT_EQ(run("generate", c), 0);
  EXPECT_EQ(slurp(c.workdir / "synth.csv"), first);

  std::string out;
  ASSERT_EQ(run("evaluate", c, &out), 0);
  EXPECT_NE(out.find("diff-MLEF"), std::string::npos);
  EXPECT_NO_THROW(validate_report(nlohmann::json::parse(slurp(c.workdir / "report.json"))));
}

TEST_F(Cli, EvaluateCopyPrintsZeros) {
  mock_inputs(1200);
  auto c = base();
  ASSERT_EQ(run("ingest", c), 0);
  c.synth = (c.workdir / "train.csv").string();
  std::string out;
  ASSERT_EQ(run("evaluate", c, &out), 0);
  std::istringstream rows(out.substr(out.find('\n') + 1));
  double v;
  int count = 0;
  while (rows >> v) {
    EXPECT_LT(std::abs(v), 1e-9);
    ++count;
  }
  EXPECT_EQ(count, 5);
}

TEST_F(Cli, EvaluateMissingSynthExitsOne) {
  mock_inputs(500);
  auto c = base();
  ASSERT_EQ(run("ingest", c), 0);
  std::string err;
  EXPECT_EQ(run("evaluate", c, nullptr, &err), 1);
  EXPECT_NE(err.find("synth.csv"), std::string::npos);
}

TEST_F(Cli, DdpmZeroStepsAndRepeatability) {
  mock_inputs(600);
  auto c = base();
  c.model = "ddpm";
  c.model_set = true;
  ASSERT_EQ(run("ingest", c), 0);
  c.train.steps = 0;
  ASSERT_EQ(run("train", c), 0);
  auto m = load_checkpoint(c.workdir / "model.ddpm");
  EXPECT_EQ(m.steps_run, 0u);
  c.train.steps = 20;
  ASSERT_EQ(run("train", c), 0);
  auto ckpt = slurp(c.workdir / "model.ddpm");
  ASSERT_EQ(run("train", c), 0);
  EXPECT_EQ(slurp(c.workdir / "model.ddpm"), ckpt);
  c.n = 100;
  auto g = c;
  g.model_set = false;
  ASSERT_EQ(run("generate", g), 0);
  EXPECT_EQ(read_job_table((c.workdir / "synth.csv").string()).rows(), 100u);
  g.model = "smote";
  g.model_set = true;
  EXPECT_EQ(run("generate", g), 1);
}
