#pragma once

/**
 * @file driver.hpp
 * Subcommand implementations behind the edge-select CLI. Each returns a
 * process exit code: 0 success, 1 validation problem (config, schema,
 * arguments), 2 runtime failure.
 */

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <iostream>
#include <limits>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "edgesel/config.hpp"
#include "edgesel/replay.hpp"
#include "edgesel/report.hpp"
#include "edgesel/sim.hpp"
#include "edgesel/theory.hpp"
#include "edgesel/util.hpp"

namespace edgesel::driver {

// ============================================================================
// Argument parsing helpers
// ============================================================================

/// Seed specs: a comma list ("1,2,5") or an inclusive range ("1..10").
inline std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
  std::vector<std::uint64_t> seeds;
  const auto parse_one = [&](const std::string& tok) -> std::uint64_t {
    try {
      std::size_t used = 0;
      const std::uint64_t v = std::stoull(tok, &used);
      if (used != tok.size() || tok.empty()) throw std::invalid_argument(tok);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + tok + "' in seed spec '" + spec + "'");
    }
  };
  const auto range_at = spec.find("..");
  if (range_at != std::string::npos) {
    const std::uint64_t lo = parse_one(spec.substr(0, range_at));
    const std::uint64_t hi = parse_one(spec.substr(range_at + 2));
    if (hi < lo) throw ConfigError("seed range '" + spec + "' is descending");
    if (hi - lo > 10000) {
      throw ConfigError("seed range '" + spec + "' is unreasonably large");
    }
    for (std::uint64_t s = lo; s <= hi; ++s) seeds.push_back(s);
    return seeds;
  }
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const std::string tok =
        spec.substr(start, comma == std::string::npos ? std::string::npos
                                                      : comma - start);
    seeds.push_back(parse_one(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return seeds;
}

inline std::vector<sim::Selector> parse_selectors(const std::string& spec) {
  std::vector<sim::Selector> selectors;
  std::size_t start = 0;
  while (start <= spec.size()) {
    const auto comma = spec.find(',', start);
    const std::string tok =
        spec.substr(start, comma == std::string::npos ? std::string::npos
                                                      : comma - start);
    selectors.push_back(sim::selector_from_string(tok));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  if (selectors.empty()) throw ConfigError("empty selector list");
  return selectors;
}

/// Bin specs look like "5x5" (difficulty x entropy).
inline std::pair<int, int> parse_bins(const std::string& spec) {
  const auto x = spec.find('x');
  if (x == std::string::npos) {
    throw ConfigError("bins must look like '5x5', got '" + spec + "'");
  }
  try {
    std::size_t ua = 0, ub = 0;
    const int a = std::stoi(spec.substr(0, x), &ua);
    const int b = std::stoi(spec.substr(x + 1), &ub);
    if (ua != x || ub != spec.size() - x - 1 || a < 1 || b < 1) {
      throw std::invalid_argument(spec);
    }
    return {a, b};
  } catch (const std::exception&) {
    throw ConfigError("bins must look like '5x5', got '" + spec + "'");
  }
}

/// Runs a command body and maps exceptions to exit codes.
inline int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const RunError& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
}

inline std::filesystem::path prepare_out_dir(const std::string& out_dir) {
  const std::filesystem::path dir(out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec && !std::filesystem::is_directory(dir)) {
    throw RunError("cannot create output directory: " + out_dir);
  }
  return dir;
}

// ============================================================================
// simulate
// ============================================================================

inline int cmd_simulate(const std::string& config_path,
                        const std::string& out_dir) {
  return run_guarded([&] {
    const auto cfg = config::load_config(config_path);
    const auto dir = prepare_out_dir(out_dir);
    const auto telemetry = sim::run_training(cfg);

    report::write_file(dir / "telemetry.csv", report::telemetry_csv(telemetry));
    report::write_file(dir / "summary.json",
                       report::summary_json(telemetry).dump(2) + "\n");
    const auto manifest = config::make_manifest(
        cfg, "simulate",
        {{"telemetry_csv", "telemetry.csv"}, {"summary_json", "summary.json"}});
    report::write_file(dir / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "simulate: " << sim::to_string(cfg.selector) << " seed "
              << cfg.seed << ": final_skill "
              << report::format_double(telemetry.final_skill())
              << ", total_rollouts " << telemetry.total_rollouts()
              << ", effective_ratio "
              << report::format_double(telemetry.effective_ratio()) << '\n';
    return 0;
  });
}

// ============================================================================
// sweep
// ============================================================================

inline int cmd_sweep(const std::string& config_path,
                     const std::string& selectors_spec,
                     const std::string& seeds_spec,
                     const std::string& out_dir) {
  return run_guarded([&] {
    const auto base = config::load_config(config_path);
    const auto selectors = parse_selectors(selectors_spec);
    const auto seeds = parse_seeds(seeds_spec);
    const auto dir = prepare_out_dir(out_dir);

    struct Cell {
      sim::Selector selector;
      std::uint64_t seed;
      sim::Telemetry telemetry;
    };
    std::vector<Cell> cells;
    for (const auto selector : selectors) {
      for (const auto seed : seeds) {
        cells.push_back({selector, seed, {}});
      }
    }

    // Cells are independent runs with their own derived streams, so they
    // can execute concurrently; outputs are merged sequentially below.
    const unsigned workers = std::min<unsigned>(
        std::max(1u, std::thread::hardware_concurrency()),
        static_cast<unsigned>(cells.size()));
    std::atomic<std::size_t> next{0};
    std::vector<std::future<void>> futures;
    futures.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      futures.push_back(std::async(std::launch::async, [&] {
        for (std::size_t i = next.fetch_add(1); i < cells.size();
             i = next.fetch_add(1)) {
          sim::SimConfig cfg = base;
          cfg.selector = cells[i].selector;
          cfg.seed = cells[i].seed;
          cells[i].telemetry = sim::run_training(cfg);
        }
      }));
    }
    for (auto& f : futures) f.get();

    std::vector<std::pair<std::string, std::string>> outputs;
    std::string csv =
        "selector,seed,total_rollouts,final_skill,effective_ratio,"
        "rollout_ratio_vs_dynamic_sampling\n";
    for (const auto& cell : cells) {
      const std::string name = std::string("telemetry_") +
                               sim::to_string(cell.selector) + "_seed" +
                               std::to_string(cell.seed) + ".csv";
      report::write_file(dir / name, report::telemetry_csv(cell.telemetry));
      outputs.emplace_back(name, name);
      csv += std::string(sim::to_string(cell.selector)) + "," +
             std::to_string(cell.seed) + "," +
             std::to_string(cell.telemetry.total_rollouts()) + "," +
             report::format_double(cell.telemetry.final_skill()) + "," +
             report::format_double(cell.telemetry.effective_ratio()) + ",\n";
    }

    // Per-selector means; the rollout ratio column compares against the
    // dynamic_sampling baseline when it is part of the sweep.
    double ds_mean_rollouts = std::numeric_limits<double>::quiet_NaN();
    for (const auto selector : selectors) {
      if (selector != sim::Selector::dynamic_sampling) continue;
      double total = 0;
      int n = 0;
      for (const auto& cell : cells) {
        if (cell.selector == selector) {
          total += static_cast<double>(cell.telemetry.total_rollouts());
          ++n;
        }
      }
      ds_mean_rollouts = total / n;
    }
    for (const auto selector : selectors) {
      double rollouts = 0, skill = 0, eff = 0;
      int n = 0;
      for (const auto& cell : cells) {
        if (cell.selector != selector) continue;
        rollouts += static_cast<double>(cell.telemetry.total_rollouts());
        skill += cell.telemetry.final_skill();
        eff += cell.telemetry.effective_ratio();
        ++n;
      }
      rollouts /= n;
      skill /= n;
      eff /= n;
      csv += std::string(sim::to_string(selector)) + ",mean," +
             report::format_double(rollouts) + "," +
             report::format_double(skill) + "," + report::format_double(eff) +
             "," + report::format_double(rollouts / ds_mean_rollouts) + "\n";
    }
    report::write_file(dir / "sweep.csv", csv);
    outputs.emplace_back("sweep_csv", "sweep.csv");

    const auto manifest = config::make_manifest(base, "sweep", outputs);
    report::write_file(dir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "sweep: " << cells.size() << " cells -> "
              << (dir / "sweep.csv").string() << '\n';
    return 0;
  });
}

// ============================================================================
// verify
// ============================================================================

inline int cmd_verify(const std::string& config_path,
                      const std::string& out_dir) {
  return run_guarded([&] {
    const auto cfg = config::load_config(config_path);
    const auto dir = prepare_out_dir(out_dir);
    bool all_pass = true;
    nlohmann::json rep;

    // Concentration: empirical tail mass vs the Hoeffding bound on the
    // worst-case two-point entropy population.
    rep["concentration"] = nlohmann::json::array();
    for (const int n : {4, 8, 16, 64}) {
      for (const double alpha : {0.2, 0.05}) {
        theory::ConcentrationSpec spec{n, cfg.vocab_size, alpha,
                                       cfg.verify_trials};
        const double eta = theory::hoeffding_eta(n, cfg.vocab_size, alpha);
        const double bound =
            theory::hoeffding_failure_bound(n, cfg.vocab_size, eta);
        const double rate = theory::concentration_failure_rate(
            spec, eta, derive_seed(cfg.seed, stream::kTrial, n,
                                   static_cast<std::uint64_t>(alpha * 1000)));
        const double p = std::min(bound, 1.0);
        const double se = std::sqrt(p * (1.0 - p) /
                                    static_cast<double>(cfg.verify_trials));
        const bool pass = rate <= bound + 3.0 * se;
        all_pass = all_pass && pass;
        rep["concentration"].push_back({{"n", n},
                                        {"alpha_conf", alpha},
                                        {"eta", eta},
                                        {"bound", bound},
                                        {"empirical_rate", rate},
                                        {"standard_error", se},
                                        {"pass", pass}});
        std::printf("[%s] concentration n=%d alpha=%.2f rate=%.5f bound=%.5f\n",
                    pass ? "PASS" : "FAIL", n, alpha, rate, bound);
      }
    }

    // Rank consistency at a slim margin across model settings, plus one
    // wide-margin setting that should agree nearly always.
    rep["rank_consistency"] = nlohmann::json::array();
    const double alpha = 0.05;
    const auto rank_cell = [&](double a, double eps, double delta, int n,
                               double mult, double guarantee,
                               theory::ResidualMode mode) {
      theory::PropagationModel model{a, 0.2, eps, delta};
      theory::ConcentrationSpec spec{n, cfg.vocab_size, alpha,
                                     cfg.verify_rank_trials};
      const double rate = theory::rank_consistency_rate(
          model, spec, mult, cfg.verify_rank_trials,
          derive_seed(cfg.seed, stream::kTrial, n,
                      static_cast<std::uint64_t>(a * 100 + eps * 10000)),
          mode);
      const double se =
          std::sqrt(guarantee * (1.0 - guarantee) /
                    static_cast<double>(cfg.verify_rank_trials));
      const bool pass = rate >= guarantee - 3.0 * se;
      all_pass = all_pass && pass;
      rep["rank_consistency"].push_back({{"a", a},
                                         {"epsilon", eps},
                                         {"delta", delta},
                                         {"n", n},
                                         {"margin_multiplier", mult},
                                         {"guarantee", guarantee},
                                         {"empirical_rate", rate},
                                         {"standard_error", se},
                                         {"pass", pass}});
      std::printf(
          "[%s] rank a=%.2g eps=%.2g delta=%.2g n=%d mult=%.2f rate=%.4f "
          "guarantee=%.4f\n",
          pass ? "PASS" : "FAIL", a, eps, delta, n, mult, rate, guarantee);
    };
    for (const double a : {1.0, 2.0}) {
      for (const auto& [eps, delta] :
           std::vector<std::pair<double, double>>{{0.0, 0.0}, {0.02, 0.01}}) {
        for (const int n : {16, 64}) {
          rank_cell(a, eps, delta, n, 1.05, 1.0 - 2.0 * alpha,
                    cfg.residual_mode);
        }
      }
    }
    rank_cell(1.0, 0.01, 0.005, 512, 4.0, 0.99, theory::ResidualMode::uniform);

    // Propagation fit on the configured model.
    {
      const auto fit = theory::propagation_fit_check(
          cfg.propagation, 2048, 20, derive_seed(cfg.seed, stream::kTrial, 99),
          cfg.group_size, cfg.vocab_size, cfg.token_jitter, cfg.residual_mode);
      const bool pass = fit.pearson_r >= 0.9 && fit.binned_r_squared >= 0.9;
      all_pass = all_pass && pass;
      rep["propagation_fit"] = {{"pearson_r", fit.pearson_r},
                                {"binned_r_squared", fit.binned_r_squared},
                                {"binned_slope", fit.binned_slope},
                                {"pass", pass}};
      std::printf("[%s] propagation fit r=%.4f binned_r2=%.4f\n",
                  pass ? "PASS" : "FAIL", fit.pearson_r, fit.binned_r_squared);
    }

    rep["all_pass"] = all_pass;
    report::write_file(dir / "verify_report.json", rep.dump(2) + "\n");
    std::cout << (all_pass ? "verify: all checks passed\n"
                           : "verify: some checks FAILED\n");
    return all_pass ? 0 : 2;
  });
}

// ============================================================================
// staleness / heatmap / replay
// ============================================================================

inline int cmd_staleness(const std::string& config_path, int lag,
                         double fraction) {
  return run_guarded([&] {
    const auto cfg = config::load_config(config_path);
    const auto result = sim::staleness_experiment(cfg, lag, fraction);
    std::cout << report::staleness_json(result, lag, fraction).dump(2) << '\n';
    return 0;
  });
}

inline int cmd_heatmap(const std::string& config_path,
                       const std::string& bins_spec) {
  return run_guarded([&] {
    const auto cfg = config::load_config(config_path);
    const auto [dbins, ebins] = parse_bins(bins_spec);
    const auto map = sim::utility_heatmap(cfg, dbins, ebins);
    std::cout << report::heatmap_json(map).dump(2) << '\n';
    return 0;
  });
}

inline int cmd_replay(const std::string& log_path,
                      const std::string& selector_name) {
  return run_guarded([&] {
    const auto selector = sim::selector_from_string(selector_name);
    const auto rows = replay::load_replay_log(log_path);
    const std::uint64_t seed = config::resolve_env_seed(1);
    const auto report = replay::replay_log(rows, selector, seed);
    std::cout << replay::replay_report_json(report).dump(2) << '\n';
    return 0;
  });
}

}  // namespace edgesel::driver
