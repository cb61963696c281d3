#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>
#include <sys/wait.h>

namespace {

namespace fs = std::filesystem;

struct Command {
  int exit_code = -1;
  std::string output;
};

// Runs the CLI with a scratch capture file; stdout and stderr together.
Command run_cli(const std::string& args) {
  static int counter = 0;
  const std::string capture =
      "/tmp/edgesel_cli_capture_" + std::to_string(counter++) + ".txt";
  const std::string cmd = std::string(EDGE_SELECT_BIN) + " " + args + " > " +
                          capture + " 2>&1";
  const int status = std::system(cmd.c_str());
  Command result;
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::stringstream buf;
  buf << in.rdbuf();
  result.output = buf.str();
  fs::remove(capture);
  return result;
}

std::string write_file(const std::string& name, const std::string& content) {
  const std::string path = "/tmp/edgesel_cli_" + name;
  std::ofstream out(path);
  out << content;
  return path;
}

const char* kSmallConfig = R"({
  "seed": 11,
  "selector": "hive",
  "num_prompts": 150,
  "group_size": 4,
  "target_batch": 16,
  "steps": 10,
  "prompt_length": 8,
  "response_length": 32
})";

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("simulate writes telemetry, summary, and manifest") {
  const auto cfg = write_file("sim.json", kSmallConfig);
  const std::string out_dir = "/tmp/edgesel_cli_sim_out";
  fs::remove_all(out_dir);
  const auto r = run_cli("simulate --config " + cfg + " --out " + out_dir);
  CHECK(r.exit_code == 0);
  CHECK(fs::exists(out_dir + "/telemetry.csv"));
  CHECK(fs::exists(out_dir + "/summary.json"));
  CHECK(fs::exists(out_dir + "/manifest.json"));

  std::ifstream m(out_dir + "/manifest.json");
  const auto manifest = nlohmann::json::parse(m);
  CHECK(manifest.at("command") == "simulate");
  CHECK(manifest.at("seed") == 11);
  CHECK(manifest.at("config").at("selector") == "hive");
  CHECK(manifest.at("outputs").at("telemetry_csv") == "telemetry.csv");

  std::ifstream t(out_dir + "/telemetry.csv");
  std::string header;
  std::getline(t, header);
  CHECK(header.rfind("step,raw_sampled,promoted,rollouts", 0) == 0);
}

TEST_CASE("a manifest can seed an identical rerun") {
  const auto cfg = write_file("rerun.json", kSmallConfig);
  const std::string out_a = "/tmp/edgesel_cli_rerun_a";
  const std::string out_b = "/tmp/edgesel_cli_rerun_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);
  CHECK(run_cli("simulate --config " + cfg + " --out " + out_a).exit_code == 0);
  CHECK(run_cli("simulate --config " + out_a + "/manifest.json --out " +
                out_b)
            .exit_code == 0);
  std::ifstream fa(out_a + "/telemetry.csv"), fb(out_b + "/telemetry.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(!sa.str().empty());
}

TEST_CASE("config problems exit 1 with a pointed message") {
  auto r = run_cli("simulate --config /tmp/edgesel_cli_absent.json");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("cannot open config file") != std::string::npos);

  const auto broken = write_file("broken.json", "{\n  \"seed\": oops\n}\n");
  r = run_cli("simulate --config " + broken);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find(":2:") != std::string::npos);

  const auto unknown = write_file("unknown.json", R"({"sede": 4})");
  r = run_cli("simulate --config " + unknown);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("unknown config key 'sede'") != std::string::npos);

  const auto bad_selector =
      write_file("badsel.json", R"({"selector": "greedy"})");
  r = run_cli("simulate --config " + bad_selector);
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("unknown selector") != std::string::npos);
}

TEST_CASE("CLI misuse exits 1") {
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("simulate").exit_code == 1);      // missing --config
  CHECK(run_cli("prognosticate").exit_code == 1); // unknown subcommand
  const auto cfg = write_file("bins.json", kSmallConfig);
  const auto r = run_cli("heatmap --config " + cfg + " --bins nonsense");
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("bins must look like") != std::string::npos);
}

TEST_CASE("runtime failures exit 2") {
  // Zero steps: the heatmap observes nothing and cannot bin.
  const auto cfg = write_file("zerosteps.json", R"({
    "num_prompts": 150, "group_size": 4, "target_batch": 16,
    "steps": 0, "prompt_length": 8, "response_length": 32
  })");
  const auto r = run_cli("heatmap --config " + cfg + " --bins 3x3");
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("no rollout groups") != std::string::npos);
}

TEST_CASE("the environment seed wins over the config seed") {
  const auto cfg = write_file("envwins.json", kSmallConfig);
  const std::string out_dir = "/tmp/edgesel_cli_env_out";
  fs::remove_all(out_dir);
  const auto r = run_cli("simulate --config " + cfg + " --out " + out_dir);
  CHECK(r.exit_code == 0);

  const std::string out_env = "/tmp/edgesel_cli_env_out2";
  fs::remove_all(out_env);
  ::setenv("EDGE_SELECT_SEED", "4242", 1);
  const auto overridden =
      run_cli("simulate --config " + cfg + " --out " + out_env);
  ::unsetenv("EDGE_SELECT_SEED");
  CHECK(overridden.exit_code == 0);
  std::ifstream m(out_env + "/manifest.json");
  const auto manifest = nlohmann::json::parse(m);
  CHECK(manifest.at("seed") == 4242);

  std::ifstream fa(out_dir + "/telemetry.csv"), fb(out_env + "/telemetry.csv");
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() != sb.str());

  ::setenv("EDGE_SELECT_SEED", "abc", 1);
  const auto bad = run_cli("simulate --config " + cfg + " --out " + out_env);
  ::unsetenv("EDGE_SELECT_SEED");
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("EDGE_SELECT_SEED") != std::string::npos);
}

TEST_CASE("staleness and heatmap print JSON reports") {
  const auto cfg = write_file("probe.json", kSmallConfig);
  auto r = run_cli("staleness --config " + cfg + " --lag 5 --fraction 0.25");
  CHECK(r.exit_code == 0);
  auto j = nlohmann::json::parse(r.output);
  CHECK(j.at("lag") == 5);
  CHECK(j.at("snapshot_step") == 5);
  CHECK(j.at("evaluation_step") == 10);
  CHECK(j.at("historical_median").is_number());

  r = run_cli("staleness --config " + cfg + " --lag 11");
  CHECK(r.exit_code == 1);  // steps < lag

  r = run_cli("heatmap --config " + cfg + " --bins 4x3");
  CHECK(r.exit_code == 0);
  j = nlohmann::json::parse(r.output);
  CHECK(j.at("difficulty_bins") == 4);
  CHECK(j.at("entropy_bins") == 3);
  CHECK(j.at("cells").size() > 0);
}

TEST_CASE("replay reads a log and reports the selector's spend") {
  const auto log = write_file("replay.jsonl",
                              R"({"epoch":0,"prompt_id":1,"rewards":[1,1],"response_entropy":0.2,"prompt_entropy":0.1}
{"epoch":0,"prompt_id":2,"rewards":[1,0],"response_entropy":0.8,"prompt_entropy":0.9}
{"epoch":1,"prompt_id":1,"rewards":[1,1],"response_entropy":0.2,"prompt_entropy":0.1}
{"epoch":1,"prompt_id":2,"rewards":[0,1],"response_entropy":0.7,"prompt_entropy":0.8}
)");
  auto r = run_cli("replay --log " + log + " --selector uniform");
  CHECK(r.exit_code == 0);
  auto j = nlohmann::json::parse(r.output);
  CHECK(j.at("selector") == "uniform");
  CHECK(j.at("groups_logged") == 4);
  CHECK(j.at("groups_spent") == 4);

  r = run_cli("replay --log " + log + " --selector stage2_only");
  CHECK(r.exit_code == 0);
  j = nlohmann::json::parse(r.output);
  CHECK(j.at("groups_spent") == 2);  // top half by logged entropy per epoch

  r = run_cli("replay --log /tmp/edgesel_cli_no_log.jsonl --selector hive");
  CHECK(r.exit_code == 1);
  r = run_cli("replay --log " + log + " --selector greedy");
  CHECK(r.exit_code == 1);
}

TEST_CASE("sweep crosses selectors and seeds and summarizes the grid") {
  const auto cfg = write_file("sweep.json", kSmallConfig);
  const std::string out_dir = "/tmp/edgesel_cli_sweep_out";
  fs::remove_all(out_dir);
  const auto r = run_cli("sweep --config " + cfg +
                         " --selectors hive,uniform,dynamic_sampling" +
                         " --seeds 1..3 --out " + out_dir);
  CHECK(r.exit_code == 0);
  for (const char* selector : {"hive", "uniform", "dynamic_sampling"}) {
    for (int seed = 1; seed <= 3; ++seed) {
      CHECK(fs::exists(out_dir + "/telemetry_" + selector + "_seed" +
                       std::to_string(seed) + ".csv"));
    }
  }
  std::ifstream s(out_dir + "/sweep.csv");
  std::string line;
  std::getline(s, line);
  CHECK(line ==
        "selector,seed,total_rollouts,final_skill,effective_ratio,"
        "rollout_ratio_vs_dynamic_sampling");
  int rows = 0, mean_rows = 0;
  while (std::getline(s, line)) {
    ++rows;
    if (line.find(",mean,") != std::string::npos) ++mean_rows;
  }
  CHECK(rows == 9 + 3);  // one per cell plus one mean per selector
  CHECK(mean_rows == 3);

  const auto bad = run_cli("sweep --config " + cfg + " --seeds 5..1 --out " +
                           out_dir);
  CHECK(bad.exit_code == 1);
}

}
