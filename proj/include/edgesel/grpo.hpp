#pragma once

/**
 * @file grpo.hpp
 * Group-relative advantage computation and entropy summaries.
 *
 * A reward group holds the scalar rewards of all rollouts drawn for one
 * prompt. Advantages are reward deviations normalized by the population
 * standard deviation of the group; a group whose rewards are identical
 * carries no learning signal and maps to an all-zero advantage vector.
 *
 * Entropies are in nats throughout (natural log).
 */

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "edgesel/util.hpp"

namespace edgesel::grpo {

/// Per-position (or per-token) entropy values for one sequence, in nats.
using EntropySequence = std::vector<double>;

// ============================================================================
// Validated value types
// ============================================================================

/**
 * Rewards of one rollout group. Requires at least two entries, each in
 * [0, 1]. Callers that know the configured group size G should also check
 * size() == G at the boundary where G is available.
 */
class RewardGroup {
 public:
  explicit RewardGroup(std::vector<double> rewards)
      : rewards_(std::move(rewards)) {
    if (rewards_.size() < 2) {
      throw std::invalid_argument("RewardGroup requires at least 2 rewards");
    }
    for (double r : rewards_) {
      if (!(r >= 0.0 && r <= 1.0)) {
        throw std::invalid_argument("RewardGroup rewards must lie in [0, 1]");
      }
    }
  }

  const std::vector<double>& values() const { return rewards_; }
  std::size_t size() const { return rewards_.size(); }

 private:
  std::vector<double> rewards_;
};

/**
 * A categorical next-token distribution. Requires at least two outcomes,
 * non-negative probabilities, and a total within 1e-6 of 1.
 */
class TokenDistribution {
 public:
  explicit TokenDistribution(std::vector<double> probs)
      : probs_(std::move(probs)) {
    if (probs_.size() < 2) {
      throw std::invalid_argument(
          "TokenDistribution requires vocab size >= 2");
    }
    double sum = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0)) {
        throw std::invalid_argument(
            "TokenDistribution probabilities must be non-negative");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw std::invalid_argument(
          "TokenDistribution probabilities must sum to 1 within 1e-6");
    }
  }

  const std::vector<double>& probs() const { return probs_; }
  std::size_t vocab_size() const { return probs_.size(); }

 private:
  std::vector<double> probs_;
};

// ============================================================================
// Advantages
// ============================================================================

/// True iff every reward in the group is identical (max - min == 0 exactly).
inline bool is_zero_variance(const RewardGroup& group) {
  const auto& r = group.values();
  auto [mn, mx] = std::minmax_element(r.begin(), r.end());
  return *mx - *mn == 0.0;
}

/**
 * Group-relative advantages: (r_i - mean) / std, where std is the
 * population standard deviation (divide by G, no Bessel correction, no
 * epsilon). A zero-variance group returns an exact all-zero vector.
 *
 * @example rewards [1, 1, 0, 0] -> [1, 1, -1, -1]
 */
inline std::vector<double> group_advantages(const RewardGroup& group) {
  const auto& r = group.values();
  const std::size_t g = r.size();
  if (is_zero_variance(group)) {
    return std::vector<double>(g, 0.0);
  }
  const double mean = std::accumulate(r.begin(), r.end(), 0.0) /
                      static_cast<double>(g);
  double var = 0.0;
  for (double x : r) {
    const double d = x - mean;
    var += d * d;
  }
  var /= static_cast<double>(g);
  const double sd = std::sqrt(var);
  std::vector<double> adv(g);
  for (std::size_t i = 0; i < g; ++i) {
    adv[i] = (r[i] - mean) / sd;
  }
  return adv;
}

// ============================================================================
// Entropy summaries
// ============================================================================

/**
 * Shannon entropy of a next-token distribution in nats, with the
 * convention 0 * ln 0 = 0. Bounded by [0, ln(vocab_size)].
 *
 * @example uniform over 4 outcomes -> ln 4
 * @example [0.5, 0.5, 0, 0]        -> ln 2
 */
inline double token_entropy(const TokenDistribution& dist) {
  double h = 0.0;
  for (double p : dist.probs()) {
    if (p > 0.0) h -= p * std::log(p);
  }
  return h < 0.0 ? 0.0 : h;
}

/// Mean of a non-empty entropy sequence.
inline double sequence_mean_entropy(const EntropySequence& seq) {
  if (seq.empty()) {
    throw std::invalid_argument("sequence_mean_entropy: empty sequence");
  }
  return std::accumulate(seq.begin(), seq.end(), 0.0) /
         static_cast<double>(seq.size());
}

/**
 * Response entropy of one rollout group: the mean over its G rollouts of
 * each rollout's mean token entropy.
 *
 * @param sequences per-rollout token entropy sequences; must have exactly
 *                  group_size entries, none empty
 */
inline double response_entropy_summary(
    const std::vector<EntropySequence>& sequences, int group_size) {
  if (group_size < 2) {
    throw std::invalid_argument("response_entropy_summary: group size >= 2");
  }
  if (sequences.size() != static_cast<std::size_t>(group_size)) {
    throw std::invalid_argument(
        "response_entropy_summary: sequence count must equal group size");
  }
  double total = 0.0;
  for (const auto& seq : sequences) {
    total += sequence_mean_entropy(seq);
  }
  return total / static_cast<double>(group_size);
}

/**
 * Prompt entropy V(x): the mean predictive entropy over prompt positions
 * 2..L_p. The input holds the per-position entropies for those positions,
 * so its length is L_p - 1 and the divisor is L_p - 1.
 *
 * @example entries [0.2, 0.4] (L_p = 3) -> 0.3
 */
inline double prompt_entropy(const EntropySequence& position_entropies) {
  if (position_entropies.empty()) {
    throw std::invalid_argument(
        "prompt_entropy: needs at least one position (prompt length >= 2)");
  }
  return std::accumulate(position_entropies.begin(), position_entropies.end(),
                         0.0) /
         static_cast<double>(position_entropies.size());
}

}  // namespace edgesel::grpo
