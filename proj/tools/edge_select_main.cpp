// edge-select: prompt selection simulator and bound verifier.
//
// Subcommands:
//   simulate   run one training simulation, write telemetry + manifest
//   sweep      cross selectors x seeds, write per-cell telemetry + sweep.csv
//   verify     check concentration / rank / propagation bounds empirically
//   staleness  compare a lagged metric snapshot against fresh scores
//   heatmap    bin realized utility by accuracy and response entropy
//   replay     rerun selection decisions over a recorded rollout log

#include <CLI11.hpp>

#include "edgesel/driver.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Prompt selection simulator and bound verifier"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string selectors = "hive,uniform,dynamic_sampling";
  std::string seeds = "1..5";
  std::string bins = "5x5";
  std::string log_path;
  std::string selector_name = "hive";
  int lag = 100;
  double fraction = 0.2;

  auto* simulate = app.add_subcommand("simulate", "Run one training simulation");
  simulate->add_option("--config", config_path, "JSON config or manifest")
      ->required();
  simulate->add_option("--out", out_dir, "Output directory");

  auto* sweep = app.add_subcommand("sweep", "Run a selector x seed grid");
  sweep->add_option("--config", config_path, "JSON config or manifest")
      ->required();
  sweep->add_option("--selectors", selectors, "Comma-separated selector list");
  sweep->add_option("--seeds", seeds, "Seed list '1,2,3' or range '1..10'");
  sweep->add_option("--out", out_dir, "Output directory");

  auto* verify = app.add_subcommand("verify", "Check statistical bounds");
  verify->add_option("--config", config_path, "JSON config or manifest")
      ->required();
  verify->add_option("--out", out_dir, "Output directory");

  auto* staleness =
      app.add_subcommand("staleness", "Lagged vs fresh selection comparison");
  staleness->add_option("--config", config_path, "JSON config or manifest")
      ->required();
  staleness->add_option("--lag", lag, "Steps between snapshot and evaluation");
  staleness->add_option("--fraction", fraction, "Top fraction to select");

  auto* heatmap =
      app.add_subcommand("heatmap", "Utility by accuracy x entropy bins");
  heatmap->add_option("--config", config_path, "JSON config or manifest")
      ->required();
  heatmap->add_option("--bins", bins, "Grid shape, e.g. 5x5");

  auto* replay = app.add_subcommand("replay", "Replay selection over a log");
  replay->add_option("--log", log_path, "JSONL rollout log")->required();
  replay->add_option("--selector", selector_name, "Selector to replay");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (simulate->parsed()) {
    return edgesel::driver::cmd_simulate(config_path, out_dir);
  }
  if (sweep->parsed()) {
    return edgesel::driver::cmd_sweep(config_path, selectors, seeds, out_dir);
  }
  if (verify->parsed()) {
    return edgesel::driver::cmd_verify(config_path, out_dir);
  }
  if (staleness->parsed()) {
    return edgesel::driver::cmd_staleness(config_path, lag, fraction);
  }
  if (heatmap->parsed()) {
    return edgesel::driver::cmd_heatmap(config_path, bins);
  }
  if (replay->parsed()) {
    return edgesel::driver::cmd_replay(log_path, selector_name);
  }
  return 1;
}
