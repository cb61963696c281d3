#pragma once

/**
 * @file gate.hpp
 * Online verification gate (Stage 2): scores every candidate's current
 * prompt entropy through an oracle and promotes the top half at the
 * median threshold. Scoring touches only prompt tokens, so its cost is a
 * small fraction of a rollout.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "edgesel/util.hpp"

namespace edgesel::gate {

/// Prompt entropy V plus the prompt length that was scored (cost basis).
struct PromptScore {
  double entropy = 0.0;
  int prompt_length = 2;
};

/// Scores one prompt's current entropy. Returns nullopt when the prompt
/// cannot be scored (e.g. missing from a replay log); such ids are
/// rejected and surfaced in GateResult::failed.
class EntropyOracle {
 public:
  virtual ~EntropyOracle() = default;
  virtual std::optional<PromptScore> score(PromptId id) = 0;
};

/// Median of a non-empty value list. Even counts average the two middle
/// elements.
inline double median_threshold(std::vector<double> values) {
  if (values.empty()) {
    throw std::invalid_argument("median_threshold: empty input");
  }
  const std::size_t n = values.size();
  const std::size_t mid = n / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double upper = values[mid];
  if (n % 2 == 1) return upper;
  const double lower =
      *std::max_element(values.begin(), values.begin() + mid);
  return 0.5 * (lower + upper);
}

struct GateResult {
  double gamma = std::numeric_limits<double>::quiet_NaN();
  std::vector<PromptId> promoted;   // ascending (entropy, id)
  std::vector<PromptId> rejected;   // ascending (entropy, id); failed ids last
  std::vector<PromptId> failed;     // oracle failures, in pool order
  long long scoring_cost_units = 0; // sum of scored prompt lengths
};

/**
 * Applies the median gate to a candidate pool. Each id is scored exactly
 * once; gamma is the median entropy of the scored ids and exactly
 * ceil(n/2) of them are promoted. At the threshold boundary ties are
 * broken by prompt id, with larger ids falling on the promoted side.
 * Failed ids are rejected and reported; they contribute no scoring cost.
 */
inline GateResult apply_gate(std::span<const PromptId> pool,
                             EntropyOracle& oracle) {
  if (pool.empty()) {
    throw std::invalid_argument("apply_gate: empty candidate pool");
  }
  struct Scored {
    double entropy;
    PromptId id;
  };
  GateResult result;
  std::vector<Scored> scored;
  scored.reserve(pool.size());
  for (PromptId id : pool) {
    const auto s = oracle.score(id);
    if (!s) {
      result.failed.push_back(id);
      continue;
    }
    if (s->prompt_length < 2) {
      throw RunError("oracle returned prompt length < 2");
    }
    scored.push_back({s->entropy, id});
    result.scoring_cost_units += s->prompt_length;
  }
  if (!scored.empty()) {
    std::vector<double> entropies;
    entropies.reserve(scored.size());
    for (const auto& s : scored) entropies.push_back(s.entropy);
    result.gamma = median_threshold(std::move(entropies));

    std::sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
      if (a.entropy != b.entropy) return a.entropy < b.entropy;
      return a.id < b.id;
    });
    const std::size_t keep = (scored.size() + 1) / 2;
    const std::size_t cut = scored.size() - keep;
    for (std::size_t i = 0; i < cut; ++i) {
      result.rejected.push_back(scored[i].id);
    }
    for (std::size_t i = cut; i < scored.size(); ++i) {
      result.promoted.push_back(scored[i].id);
    }
  }
  for (PromptId id : result.failed) {
    result.rejected.push_back(id);
  }
  return result;
}

/// Fraction of this step's compute spent on gate scoring:
/// scoring_cost / (scoring_cost + promoted * G * L_r).
inline double gate_overhead(const GateResult& result, int group_size,
                            int response_length) {
  if (group_size < 2 || response_length < 1) {
    throw std::invalid_argument(
        "gate_overhead: require group_size >= 2 and response_length >= 1");
  }
  const double score_cost = static_cast<double>(result.scoring_cost_units);
  const double rollout_cost = static_cast<double>(result.promoted.size()) *
                              group_size * response_length;
  const double total = score_cost + rollout_cost;
  if (total <= 0.0) return 0.0;
  return score_cost / total;
}

}  // namespace edgesel::gate
