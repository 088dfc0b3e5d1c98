#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "iwc/bench.hpp"

namespace {

namespace fs = std::filesystem;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("iwc_bench_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

iwc::ExperimentConfig smoke_config(const fs::path& outdir, const std::string& run_id) {
  iwc::ExperimentConfig c;
  c.run_id = run_id;
  c.outdir = outdir;
  c.n = 1000;
  c.m = 1;
  c.seed = 42;
  c.regressors = {iwc::RegressorSpec{"OLS", {}}};
  return c;
}

TEST(Config, JsonRoundTrip) {
  iwc::ExperimentConfig c = smoke_config("out", "x");
  c.regressors = iwc::default_regressors();
  c.dgp.alpha = 0.4;
  c.ladder = {1000, 2000};
  const auto j = c.to_json();
  EXPECT_EQ(iwc::ExperimentConfig::from_json(j).to_json(), j);
  EXPECT_EQ(j["schema_version"], iwc::kConfigSchemaVersion);
}

TEST(Config, InvalidConfigurations) {
  const nlohmann::json base = smoke_config("out", "x").to_json();
  for (const auto& patch : std::vector<nlohmann::json>{
           {{"n", 50}},
           {{"m", 0}},
           {{"train_fraction", 1.0}},
           {{"regressors", nlohmann::json::array()}},
           {{"regressors", {"GRADIENT_BOOSTING"}}},
           {{"schema_version", 99}},
           {{"mode", "real"}},
           {{"unknown_key", 1}},
           {{"dgp", {{"alpha", -0.1}}}},
           {{"run_id", "../escape"}}}) {
    nlohmann::json j = base;
    j.merge_patch(patch);
    try {
      iwc::ExperimentConfig::from_json(j).validate();
      ADD_FAILURE() << patch.dump();
    } catch (const iwc::Error& e) {
      EXPECT_EQ(e.kind(), iwc::ErrorKind::kConfigError) << patch.dump();
    }
  }
}

TEST(Seeds, RepetitionSeedsDifferAndReplay) {
  EXPECT_NE(iwc::repetition_seed(1, 1), iwc::repetition_seed(1, 2));
  EXPECT_NE(iwc::repetition_seed(1, 1), iwc::repetition_seed(2, 1));
  EXPECT_EQ(iwc::repetition_seed(7, 3), iwc::repetition_seed(7, 3));
}

TEST(Experiment, SmokeRunPersistsTheLayout) {
  const auto out = scratch("smoke");
  const auto c = smoke_config(out, "smoke");
  const auto result = iwc::run_experiment(c);
  EXPECT_FALSE(result.partial());
  ASSERT_EQ(result.series.size(), 1u);
  EXPECT_EQ(result.series[0].reports.size(), 1u);
  ASSERT_EQ(result.series[0].truth.size(), 1u);
  const auto dir = out / "smoke";
  for (const char* f : {"config.json", "reports/m_1.json", "metrics.csv", "checks.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  std::ifstream csv(dir / "metrics.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "alpha,beta,tail,regressor,family,metric,value");
  const auto report = nlohmann::json::parse(slurp(dir / "reports/m_1.json"));
  EXPECT_EQ(report["repetition"], 1);
  // The stored config reloads to the same experiment.
  const auto reloaded = iwc::ExperimentConfig::load(dir / "config.json");
  EXPECT_EQ(reloaded.to_json(), c.to_json());
}

TEST(Experiment, IdenticalConfigsGiveByteIdenticalArtifacts) {
  const auto out = scratch("determinism");
  auto a = smoke_config(out, "a");
  a.m = 3;
  a.regressors = {iwc::RegressorSpec{"OLS", {}}, iwc::RegressorSpec{"RF", {}}};
  a.regressors[1].spec.family = iwc::Family::kRandomForest;
  a.regressors[1].spec.forest.n_trees = 10;
  auto b = a;
  b.run_id = "b";
  b.threads = 1;  // serial versus parallel must not matter
  iwc::run_experiment(a);
  iwc::run_experiment(b);
  for (const char* f : {"reports/m_1.json", "reports/m_2.json", "reports/m_3.json", "metrics.csv",
                        "checks.json"}) {
    EXPECT_EQ(slurp(out / "a" / f), slurp(out / "b" / f)) << f;
  }
}

TEST(Experiment, MetricsCoverEveryFamily) {
  auto c = smoke_config(scratch("metrics"), "m");
  c.m = 2;
  const auto result = iwc::run_experiment(c, false);
  std::set<std::string> seen;
  for (const auto& r : result.metrics) seen.insert(r.family + "/" + r.metric);
  for (const char* key : {"IoC/wre_ate", "IwC/wre_ate", "DRE/wre_ate", "IwC/error_reduction_ate",
                          "IwC/consistency_std", "IwC/wre_atte"}) {
    EXPECT_TRUE(seen.count(key)) << key;
  }
}

TEST(Ladder, OnePointPerSize) {
  auto c = smoke_config(scratch("ladder"), "l");
  c.m = 2;
  c.families = {iwc::EstimatorFamily::kIwc};
  const auto result = iwc::run_consistency_ladder(c, {500, 1000}, false);
  ASSERT_EQ(result.points.size(), 2u);
  EXPECT_EQ(result.points[0].n, 500u);
  EXPECT_EQ(result.points[1].n, 1000u);
  EXPECT_EQ(result.points[0].repetitions, 2u);
  EXPECT_THROW(iwc::run_consistency_ladder(c, {1000, 500}, false), iwc::Error);
}

TEST(Features, CsvRoundTrip) {
  const auto dir = scratch("features");
  const auto cfg = iwc::DgpConfig::semi_synthetic();
  const auto f = iwc::sample_features(cfg, 25, 4);
  iwc::write_features_csv(dir / "f.csv", f);
  const auto g = iwc::read_features_csv(dir / "f.csv", cfg.p_u, cfg.p_x, cfg.p_z);
  EXPECT_EQ(f.u, g.u);
  EXPECT_EQ(f.x, g.x);
  EXPECT_EQ(f.z, g.z);
}

// ---------------------------------------------------------------- CLI

int run_cli(const std::string& args) {
  const std::string cmd = std::string(IWC_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  EXPECT_EQ(run_cli("bench -n 50 -m 1 -o " + dir.string()), 2);
  EXPECT_EQ(run_cli("bench --regressors NOPE -o " + dir.string()), 2);
  EXPECT_EQ(run_cli("bench --config " + (dir / "missing.json").string()), 2);
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_EQ(run_cli("bench --config " + (dir / "bad.json").string()), 2);
  EXPECT_EQ(run_cli("bench -n 1000 -m 1 --regressors OLS --run-id ok -o " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "ok" / "metrics.csv"));
  EXPECT_EQ(run_cli("simulate -n 200 --run-id sim -o " + dir.string()), 0);
  EXPECT_TRUE(fs::exists(dir / "sim" / "data.csv"));
  EXPECT_EQ(run_cli("estimate --data " + (dir / "sim" / "data.csv").string() + " --levels " +
                    (dir / "sim" / "levels.json").string() + " --regressor OLS"),
            0);
  EXPECT_EQ(run_cli("nonsense"), 2);
}

}  // namespace
