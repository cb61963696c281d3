#pragma once

/**
 * @file replay.hpp
 * Counterfactual selector evaluation over logged training epochs.
 *
 * A replay log is JSONL with one rollout group per line:
 *   {"epoch": 0, "prompt_id": 7, "rewards": [1, 0, ...],
 *    "response_entropy": 0.8, "prompt_entropy": 0.65}
 * Epochs are streamed in ascending order. For each epoch the selector
 * under test decides which logged groups it would have spent rollouts
 * on, using the trace built from earlier epochs (Stage 1) and the logged
 * prompt entropies (Stage 2). After the decision, the epoch's groups are
 * committed to the trace regardless of the decision, since the log is
 * the ground history.
 */

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "edgesel/gate.hpp"
#include "edgesel/grpo.hpp"
#include "edgesel/sim.hpp"
#include "edgesel/stage1.hpp"
#include "edgesel/util.hpp"

namespace edgesel::replay {

struct ReplayRow {
  long long epoch = 0;
  PromptId prompt_id = 0;
  std::vector<double> rewards;
  double response_entropy = 0.0;
  double prompt_entropy = 0.0;
  std::size_t line = 0;
};

// ============================================================================
// Log parsing
// ============================================================================

namespace detail {

[[noreturn]] inline void fail_line(std::size_t line, const std::string& what) {
  throw ConfigError("replay log line " + std::to_string(line) + ": " + what);
}

}  // namespace detail

/// Reads and schema-checks a replay log. Reward vectors must share one
/// length (>= 2) across the file, with every reward in [0, 1] and both
/// entropies non-negative. Violations name the offending line.
inline std::vector<ReplayRow> load_replay_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open replay log: " + path);
  std::vector<ReplayRow> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t group_size = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      detail::fail_line(line_no, e.what());
    }
    for (const char* field :
         {"epoch", "prompt_id", "rewards", "response_entropy",
          "prompt_entropy"}) {
      if (!j.contains(field)) {
        detail::fail_line(line_no,
                          std::string("missing field '") + field + "'");
      }
    }
    ReplayRow row;
    row.line = line_no;
    try {
      row.epoch = j.at("epoch").get<long long>();
      row.prompt_id = j.at("prompt_id").get<PromptId>();
      row.rewards = j.at("rewards").get<std::vector<double>>();
      row.response_entropy = j.at("response_entropy").get<double>();
      row.prompt_entropy = j.at("prompt_entropy").get<double>();
    } catch (const nlohmann::json::exception& e) {
      detail::fail_line(line_no, e.what());
    }
    if (row.epoch < 0) detail::fail_line(line_no, "epoch must be >= 0");
    if (row.rewards.size() < 2) {
      detail::fail_line(line_no, "rewards needs at least 2 entries");
    }
    if (group_size == 0) {
      group_size = row.rewards.size();
    } else if (row.rewards.size() != group_size) {
      detail::fail_line(line_no,
                        "rewards length differs from earlier lines (" +
                            std::to_string(row.rewards.size()) + " vs " +
                            std::to_string(group_size) + ")");
    }
    for (double r : row.rewards) {
      if (!(r >= 0.0 && r <= 1.0)) {
        detail::fail_line(line_no, "rewards must lie in [0, 1]");
      }
    }
    if (row.response_entropy < 0.0) {
      detail::fail_line(line_no, "response_entropy must be >= 0");
    }
    if (row.prompt_entropy < 0.0) {
      detail::fail_line(line_no, "prompt_entropy must be >= 0");
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// ============================================================================
// Counterfactual evaluation
// ============================================================================

struct EpochStats {
  long long epoch = 0;
  long logged = 0;
  long spent = 0;
  long effective_spent = 0;
};

struct ReplayReport {
  std::string selector;
  std::uint64_t seed = 0;
  long epochs = 0;
  long groups_logged = 0;
  long groups_spent = 0;
  long logged_effective = 0;
  long effective_spent = 0;
  std::vector<EpochStats> per_epoch;

  double spent_fraction() const {
    return groups_logged == 0
               ? 0.0
               : static_cast<double>(groups_spent) / groups_logged;
  }
  double effective_fraction_of_spent() const {
    return groups_spent == 0
               ? 0.0
               : static_cast<double>(effective_spent) / groups_spent;
  }
};

namespace detail {

/// Oracle over one epoch's logged prompt entropies. Ids that were not
/// logged in the epoch cannot be scored.
class LoggedEntropyOracle final : public gate::EntropyOracle {
 public:
  explicit LoggedEntropyOracle(
      const std::unordered_map<PromptId, double>& entropies)
      : entropies_(entropies) {}

  std::optional<gate::PromptScore> score(PromptId id) override {
    auto it = entropies_.find(id);
    if (it == entropies_.end()) return std::nullopt;
    return gate::PromptScore{it->second, 2};
  }

 private:
  const std::unordered_map<PromptId, double>& entropies_;
};

}  // namespace detail

/**
 * Streams the log through a selector. Stage-1 state starts from the
 * given exploration settings and adapts per epoch on the spent groups;
 * Stage 2 reads the logged prompt entropies. Baselines without a filter
 * (uniform, dynamic_sampling) spend every logged group.
 */
inline ReplayReport replay_log(const std::vector<ReplayRow>& rows,
                               sim::Selector selector, std::uint64_t seed,
                               double lambda = 0.5,
                               stage1::ExplorationState exploration = {}) {
  ReplayReport report;
  report.selector = sim::to_string(selector);
  report.seed = seed;

  // Group rows by epoch, ascending, preserving file order within epochs.
  std::map<long long, std::vector<const ReplayRow*>> epochs;
  for (const auto& row : rows) epochs[row.epoch].push_back(&row);

  stage1::TraceStore trace;
  for (const auto& [epoch, epoch_rows] : epochs) {
    std::unordered_set<PromptId> seen;
    for (const auto* row : epoch_rows) {
      if (!seen.insert(row->prompt_id).second) {
        detail::fail_line(row->line,
                          "duplicate prompt_id " +
                              std::to_string(row->prompt_id) +
                              " within epoch " + std::to_string(epoch));
      }
    }

    std::vector<PromptId> pool;
    std::unordered_map<PromptId, const ReplayRow*> by_id;
    std::unordered_map<PromptId, double> logged_entropy;
    for (const auto* row : epoch_rows) {
      pool.push_back(row->prompt_id);
      by_id[row->prompt_id] = row;
      logged_entropy[row->prompt_id] = row->prompt_entropy;
    }

    // Which logged groups would this selector have spent rollouts on?
    std::vector<PromptId> spent;
    const bool has_stage1 = selector == sim::Selector::stage1_only ||
                            selector == sim::Selector::hive;
    const bool has_stage2 = selector == sim::Selector::stage2_only ||
                            selector == sim::Selector::hive;
    std::vector<PromptId> stage1_accepted;
    if (has_stage1) {
      const auto scores = stage1::score_pool(trace, pool, exploration, lambda);
      auto rng = make_rng(derive_seed(seed, stream::kReplay,
                                      static_cast<std::uint64_t>(epoch)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        if (unit(rng) < scores[i].p_select) {
          stage1_accepted.push_back(pool[i]);
        }
      }
    } else {
      stage1_accepted = pool;
    }
    if (has_stage2) {
      if (!stage1_accepted.empty()) {
        detail::LoggedEntropyOracle oracle(logged_entropy);
        const auto result = gate::apply_gate(stage1_accepted, oracle);
        spent = result.promoted;
      }
    } else {
      spent = stage1_accepted;
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.logged = static_cast<long>(epoch_rows.size());
    stats.spent = static_cast<long>(spent.size());
    int n_easy = 0, n_hard = 0;
    for (PromptId id : spent) {
      const auto* row = by_id.at(id);
      const grpo::RewardGroup group(row->rewards);
      if (grpo::is_zero_variance(group)) {
        if (row->rewards.front() >= 0.5) ++n_easy;
        else ++n_hard;
      } else {
        ++stats.effective_spent;
      }
    }
    if (has_stage1 && !spent.empty()) {
      exploration = stage1::adapt_exploration(
          exploration, n_easy, n_hard, static_cast<int>(spent.size()));
    }

    // The log is the ground history: every logged group was actually
    // rolled out, so all of them enter the trace.
    for (const auto* row : epoch_rows) {
      stage1::record_epoch(trace, row->prompt_id,
                           grpo::RewardGroup(row->rewards),
                           row->response_entropy);
    }

    ++report.epochs;
    report.groups_logged += stats.logged;
    report.groups_spent += stats.spent;
    report.effective_spent += stats.effective_spent;
    for (const auto* row : epoch_rows) {
      if (!grpo::is_zero_variance(grpo::RewardGroup(row->rewards))) {
        ++report.logged_effective;
      }
    }
    report.per_epoch.push_back(stats);
  }
  return report;
}

inline nlohmann::json replay_report_json(const ReplayReport& r) {
  nlohmann::json per_epoch = nlohmann::json::array();
  for (const auto& e : r.per_epoch) {
    per_epoch.push_back({{"epoch", e.epoch},
                         {"logged", e.logged},
                         {"spent", e.spent},
                         {"effective_spent", e.effective_spent}});
  }
  return {
      {"selector", r.selector},
      {"seed", r.seed},
      {"epochs", r.epochs},
      {"groups_logged", r.groups_logged},
      {"groups_spent", r.groups_spent},
      {"logged_effective", r.logged_effective},
      {"effective_spent", r.effective_spent},
      {"spent_fraction", r.spent_fraction()},
      {"effective_fraction_of_spent", r.effective_fraction_of_spent()},
      {"per_epoch", per_epoch},
  };
}

}  // namespace edgesel::replay
