#pragma once

/**
 * @file report.hpp
 * Output formatting: the fixed-order telemetry CSV, run summaries,
 * experiment reports, and a write helper that never leaves partial files
 * behind.
 */

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgesel/sim.hpp"
#include "edgesel/util.hpp"

namespace edgesel::report {

inline constexpr const char* kTelemetryHeader =
    "step,raw_sampled,promoted,rollouts,effective_rollouts,"
    "zero_var_easy_ratio,zero_var_hard_ratio,gamma,p_e_easy,p_e_hard,"
    "skill,cumulative_cost_units,cumulative_rollouts";

/// Compact, locale-independent float formatting; NaN renders as "nan".
inline std::string format_double(double x) {
  if (std::isnan(x)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", x);
  return buf;
}

inline std::string telemetry_csv(const sim::Telemetry& telemetry) {
  std::string out(kTelemetryHeader);
  out += '\n';
  for (const auto& r : telemetry.rows) {
    out += std::to_string(r.step);
    out += ',';
    out += std::to_string(r.raw_sampled);
    out += ',';
    out += std::to_string(r.promoted);
    out += ',';
    out += std::to_string(r.rollouts);
    out += ',';
    out += std::to_string(r.effective_rollouts);
    out += ',';
    out += format_double(r.zero_var_easy_ratio);
    out += ',';
    out += format_double(r.zero_var_hard_ratio);
    out += ',';
    out += format_double(r.gamma);
    out += ',';
    out += format_double(r.p_e_easy);
    out += ',';
    out += format_double(r.p_e_hard);
    out += ',';
    out += format_double(r.skill);
    out += ',';
    out += std::to_string(r.cumulative_cost_units);
    out += ',';
    out += std::to_string(r.cumulative_rollouts);
    out += '\n';
  }
  return out;
}

inline nlohmann::json summary_json(const sim::Telemetry& telemetry) {
  return {
      {"final_skill", telemetry.final_skill()},
      {"total_rollouts", telemetry.total_rollouts()},
      {"total_cost_units", telemetry.total_cost_units()},
      {"effective_ratio", telemetry.effective_ratio()},
  };
}

inline nlohmann::json staleness_json(const sim::StalenessResult& r, int lag,
                                     double fraction) {
  return {
      {"lag", lag},
      {"top_fraction", fraction},
      {"snapshot_step", r.snapshot_step},
      {"evaluation_step", r.evaluation_step},
      {"historical_median", r.historical_median},
      {"online_median", r.online_median},
  };
}

inline nlohmann::json heatmap_json(const sim::Heatmap& map) {
  nlohmann::json cells = nlohmann::json::array();
  for (int d = 0; d < map.difficulty_bins; ++d) {
    for (int e = 0; e < map.entropy_bins; ++e) {
      const long n = map.count(d, e);
      if (n == 0) continue;  // absent cells are omitted, not zeroed
      cells.push_back({{"accuracy_bin", d},
                       {"entropy_bin", e},
                       {"count", n},
                       {"mean_utility", map.cell(d, e)}});
    }
  }
  return {
      {"difficulty_bins", map.difficulty_bins},
      {"entropy_bins", map.entropy_bins},
      {"accuracy_edges", map.accuracy_edges},
      {"entropy_edges", map.entropy_edges},
      {"cells", cells},
  };
}

/**
 * Writes content to path via a temporary sibling plus rename, so readers
 * never observe a half-written file and failures leave nothing behind.
 */
inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw RunError("cannot open for writing: " + tmp.string());
    }
    out.write(content.data(),
              static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) {
      out.close();
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw RunError("failed writing: " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw RunError("cannot move output into place: " + path.string());
  }
}

}  // namespace edgesel::report
