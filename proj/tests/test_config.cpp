#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "edgesel/config.hpp"
#include "edgesel/report.hpp"

using namespace edgesel;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  const std::string path = "/tmp/edgesel_cfg_" + name + ".json";
  std::ofstream out(path);
  out << content;
  return path;
}

struct EnvSeedGuard {
  EnvSeedGuard() { ::unsetenv("EDGE_SELECT_SEED"); }
  ~EnvSeedGuard() { ::unsetenv("EDGE_SELECT_SEED"); }
};

}  // namespace

TEST_SUITE("config") {

TEST_CASE("configs round-trip through JSON with every key present") {
  sim::SimConfig cfg;
  cfg.seed = 9;
  cfg.selector = sim::Selector::stage2_only;
  cfg.lambda = 0.3;
  cfg.propagation.epsilon = 0.07;
  cfg.difficulty_distribution = sim::DifficultyDistribution::trimodal;
  cfg.residual_mode = theory::ResidualMode::uniform;

  const auto j = config::to_json(cfg);
  CHECK(j.size() == 35);
  const auto back = config::from_json(j);
  CHECK(config::to_json(back) == j);
  CHECK(back.selector == sim::Selector::stage2_only);
  CHECK(back.propagation.epsilon == 0.07);
  CHECK(back.residual_mode == theory::ResidualMode::uniform);
}

TEST_CASE("missing keys fall back to defaults") {
  const auto cfg = config::from_json(nlohmann::json::object());
  CHECK(cfg.seed == 1);
  CHECK(cfg.selector == sim::Selector::hive);
  CHECK(cfg.target_batch == 32);
  CHECK(cfg.oversample_factor == 2.0);
  CHECK(cfg.lambda == 0.5);
}

TEST_CASE("unknown keys and wrong types are rejected by name") {
  CHECK_THROWS_WITH_AS(config::from_json({{"selektor", "hive"}}),
                       "unknown config key 'selektor'", ConfigError);
  CHECK_THROWS_WITH_AS(config::from_json({{"steps", "many"}}),
                       "config key 'steps' has the wrong type", ConfigError);
  CHECK_THROWS_WITH_AS(config::from_json(nlohmann::json::array()),
                       "config root must be a JSON object", ConfigError);
  CHECK_THROWS_AS(config::from_json({{"selector", "greedy"}}), ConfigError);
  CHECK_THROWS_WITH_AS(config::from_json({{"residual_mode", "fixed"}}),
                       "residual_mode must be 'adversarial' or 'uniform'",
                       ConfigError);
  // Validation runs on the merged result.
  CHECK_THROWS_WITH_AS(config::from_json({{"group_size", 1}}),
                       "group_size must be >= 2", ConfigError);
}

TEST_CASE("config files load with positional parse errors") {
  EnvSeedGuard guard;
  CHECK_THROWS_AS(config::load_config("/tmp/edgesel_no_such_file.json"),
                  ConfigError);

  const auto path = write_temp("broken", "{\n  \"seed\": oops\n}\n");
  try {
    config::load_config(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string what = e.what();
    CHECK(what.find(path + ":2:") != std::string::npos);
    CHECK(what.find("JSON parse error") != std::string::npos);
  }

  const auto ok = write_temp("ok", R"({"seed": 12, "steps": 1})");
  CHECK(config::load_config(ok).seed == 12);
}

TEST_CASE("manifests load back as their embedded config") {
  EnvSeedGuard guard;
  sim::SimConfig cfg;
  cfg.seed = 77;
  cfg.steps = 3;
  const auto manifest =
      config::make_manifest(cfg, "simulate", {{"telemetry_csv", "t.csv"}});
  CHECK(config::is_manifest(manifest));
  CHECK(manifest.at("artifact_version") == config::kArtifactVersion);
  CHECK(manifest.at("command") == "simulate");
  CHECK(manifest.at("seed") == 77);
  CHECK(manifest.at("outputs").at("telemetry_csv") == "t.csv");

  const auto path = write_temp("manifest", manifest.dump(2));
  const auto loaded = config::load_config(path);
  CHECK(loaded.seed == 77);
  CHECK(loaded.steps == 3);
}

TEST_CASE("the environment seed overrides configs and manifests") {
  EnvSeedGuard guard;
  const auto path = write_temp("envseed", R"({"seed": 5})");
  ::setenv("EDGE_SELECT_SEED", "777", 1);
  CHECK(config::load_config(path).seed == 777);
  CHECK(config::resolve_env_seed(5) == 777);

  ::setenv("EDGE_SELECT_SEED", "12abc", 1);
  try {
    config::load_config(path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("EDGE_SELECT_SEED") !=
          std::string::npos);
    CHECK(std::string(e.what()).find("12abc") != std::string::npos);
  }
  ::setenv("EDGE_SELECT_SEED", "-4", 1);
  CHECK_THROWS_AS(config::resolve_env_seed(5), ConfigError);

  ::unsetenv("EDGE_SELECT_SEED");
  CHECK(config::load_config(path).seed == 5);
  CHECK(config::resolve_env_seed(5) == 5);
}

TEST_CASE("doubles format compactly and NaN spells nan") {
  CHECK(report::format_double(0.5) == "0.5");
  CHECK(report::format_double(0.0) == "0");
  CHECK(report::format_double(1.0 / 3.0) == "0.3333333333");
  CHECK(report::format_double(std::numeric_limits<double>::quiet_NaN()) ==
        "nan");
  CHECK(report::format_double(-2.25) == "-2.25");
}

TEST_CASE("telemetry CSV renders rows in the documented column order") {
  sim::Telemetry t;
  sim::StepRow row;
  row.step = 2;
  row.raw_sampled = 64;
  row.promoted = 32;
  row.rollouts = 256;
  row.effective_rollouts = 240;
  row.zero_var_easy_ratio = 0.0625;
  row.zero_var_hard_ratio = 0.0;
  row.gamma = 0.75;
  row.p_e_easy = 0.49;
  row.p_e_hard = 0.51;
  row.skill = 1.25;
  row.cumulative_cost_units = 100000;
  row.cumulative_rollouts = 768;
  t.rows.push_back(row);

  const auto csv = report::telemetry_csv(t);
  CHECK(csv ==
        std::string(report::kTelemetryHeader) + "\n" +
            "2,64,32,256,240,0.0625,0,0.75,0.49,0.51,1.25,100000,768\n");
}

TEST_CASE("summary and staleness reports carry the headline numbers") {
  sim::Telemetry t;
  sim::StepRow row;
  row.skill = 2.0;
  row.rollouts = 100;
  row.effective_rollouts = 80;
  row.cumulative_cost_units = 5000;
  row.cumulative_rollouts = 100;
  t.rows.push_back(row);
  const auto s = report::summary_json(t);
  CHECK(s.at("final_skill") == 2.0);
  CHECK(s.at("total_rollouts") == 100);
  CHECK(s.at("total_cost_units") == 5000);
  CHECK(s.at("effective_ratio") == 0.8);

  sim::StalenessResult r{0.4, 0.6, 200, 300};
  const auto j = report::staleness_json(r, 100, 0.2);
  CHECK(j.at("lag") == 100);
  CHECK(j.at("top_fraction") == 0.2);
  CHECK(j.at("historical_median") == 0.4);
  CHECK(j.at("online_median") == 0.6);
  CHECK(j.at("snapshot_step") == 200);
  CHECK(j.at("evaluation_step") == 300);
}

TEST_CASE("heatmap reports omit empty cells instead of zeroing them") {
  sim::Heatmap map;
  map.difficulty_bins = 2;
  map.entropy_bins = 2;
  map.accuracy_edges = {0.0, 0.5, 1.0};
  map.entropy_edges = {0.0, 0.3, 0.6};
  map.mean_utility = {0.9, std::numeric_limits<double>::quiet_NaN(),
                      std::numeric_limits<double>::quiet_NaN(), 0.4};
  map.counts = {3, 0, 0, 7};

  const auto j = report::heatmap_json(map);
  CHECK(j.at("cells").size() == 2);
  CHECK(j.at("cells")[0].at("count") == 3);
  CHECK(j.at("cells")[0].at("mean_utility") == 0.9);
  CHECK(j.at("cells")[1].at("accuracy_bin") == 1);
  CHECK(j.at("cells")[1].at("entropy_bin") == 1);
  CHECK(j.at("accuracy_edges").size() == 3);
}

TEST_CASE("file writes are atomic and failures leave nothing behind") {
  namespace fs = std::filesystem;
  const fs::path dir = "/tmp/edgesel_write_test";
  fs::create_directories(dir);
  const fs::path target = dir / "out.csv";
  report::write_file(target, "a,b\n1,2\n");
  std::ifstream in(target);
  std::stringstream buf;
  buf << in.rdbuf();
  CHECK(buf.str() == "a,b\n1,2\n");
  CHECK_FALSE(fs::exists(dir / "out.csv.tmp"));

  const fs::path bad = "/tmp/edgesel_write_missing_dir/out.csv";
  CHECK_THROWS_AS(report::write_file(bad, "x"), RunError);
  CHECK_FALSE(fs::exists(bad));
  CHECK_FALSE(fs::exists("/tmp/edgesel_write_missing_dir/out.csv.tmp"));
}

}
