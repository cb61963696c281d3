#pragma once

/**
 * @file stage1.hpp
 * History-informed probabilistic prompt selection (Stage 1).
 *
 * Selection consults only previously recorded training metadata, so this
 * stage costs no model compute. Prompts that have been reward-saturated
 * for z consecutive recorded epochs are revisited with probability p_e^z,
 * where p_e is a per-class exploration rate steered by a feedback
 * controller toward a target share of saturated groups per batch.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "edgesel/grpo.hpp"
#include "edgesel/util.hpp"

namespace edgesel::stage1 {

enum class SaturationClass { easy, hard, mixed };

inline const char* to_string(SaturationClass c) {
  switch (c) {
    case SaturationClass::easy: return "easy";
    case SaturationClass::hard: return "hard";
    default: return "mixed";
  }
}

inline SaturationClass saturation_class_from_string(const std::string& s) {
  if (s == "easy") return SaturationClass::easy;
  if (s == "hard") return SaturationClass::hard;
  if (s == "mixed") return SaturationClass::mixed;
  throw ConfigError("unknown saturation class '" + s + "'");
}

/// One prompt-epoch observation. saturation_class is easy or hard iff
/// zero_variance is true; mixed otherwise.
struct EpochRecord {
  bool zero_variance = false;
  SaturationClass saturation_class = SaturationClass::mixed;
  double response_entropy = 0.0;
};

// ============================================================================
// Trace store
// ============================================================================

/// Append-only per-prompt history of EpochRecords, serializable to JSONL
/// (one prompt per line) for checkpointing and replay.
class TraceStore {
 public:
  void record(PromptId id, const EpochRecord& rec) {
    traces_[id].push_back(rec);
  }

  bool has(PromptId id) const { return traces_.count(id) != 0; }

  const std::vector<EpochRecord>* find(PromptId id) const {
    auto it = traces_.find(id);
    return it == traces_.end() ? nullptr : &it->second;
  }

  std::optional<EpochRecord> latest(PromptId id) const {
    const auto* recs = find(id);
    if (recs == nullptr || recs->empty()) return std::nullopt;
    return recs->back();
  }

  std::size_t prompt_count() const { return traces_.size(); }

  void save_jsonl(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw RunError("cannot open trace file for writing: " + path);
    // Sort by id so checkpoints are byte-stable.
    std::map<PromptId, const std::vector<EpochRecord>*> ordered;
    for (const auto& [id, recs] : traces_) ordered[id] = &recs;
    for (const auto& [id, recs] : ordered) {
      nlohmann::json line;
      line["id"] = id;
      auto& arr = line["records"] = nlohmann::json::array();
      for (const auto& r : *recs) {
        arr.push_back({{"zero_variance", r.zero_variance},
                       {"class", to_string(r.saturation_class)},
                       {"entropy", r.response_entropy}});
      }
      out << line.dump() << '\n';
    }
    if (!out) throw RunError("failed writing trace file: " + path);
  }

  static TraceStore load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw RunError("cannot open trace file: " + path);
    TraceStore store;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ConfigError("trace line " + std::to_string(line_no) +
                          ": " + e.what());
      }
      if (!j.contains("id") || !j.contains("records")) {
        throw ConfigError("trace line " + std::to_string(line_no) +
                          ": expected fields 'id' and 'records'");
      }
      const PromptId id = j.at("id").get<PromptId>();
      for (const auto& rj : j.at("records")) {
        EpochRecord rec;
        rec.zero_variance = rj.at("zero_variance").get<bool>();
        rec.saturation_class =
            saturation_class_from_string(rj.at("class").get<std::string>());
        rec.response_entropy = rj.at("entropy").get<double>();
        store.record(id, rec);
      }
    }
    return store;
  }

 private:
  std::unordered_map<PromptId, std::vector<EpochRecord>> traces_;
};

/**
 * Classifies a finished rollout group and appends it to the prompt's trace.
 * All rewards at 1 is an easy saturation; all at 0 is hard. A group whose
 * rewards are identical at some interior value is still saturated (it has
 * no gradient signal), so it is binned to the nearer extreme.
 */
inline EpochRecord record_epoch(TraceStore& store, PromptId id,
                                const grpo::RewardGroup& rewards,
                                double response_entropy) {
  EpochRecord rec;
  rec.zero_variance = grpo::is_zero_variance(rewards);
  rec.response_entropy = response_entropy;
  if (rec.zero_variance) {
    const double v = rewards.values().front();
    rec.saturation_class =
        v >= 0.5 ? SaturationClass::easy : SaturationClass::hard;
  } else {
    rec.saturation_class = SaturationClass::mixed;
  }
  store.record(id, rec);
  return rec;
}

/// Length of the maximal all-zero-variance suffix of the prompt's trace.
/// Unseen prompts have run length 0.
inline int zero_variance_run_length(const TraceStore& store, PromptId id) {
  const auto* recs = store.find(id);
  if (recs == nullptr) return 0;
  int z = 0;
  for (auto it = recs->rbegin(); it != recs->rend() && it->zero_variance; ++it) {
    ++z;
  }
  return z;
}

// ============================================================================
// Exploration controller state
// ============================================================================

/// Decoupled exploration rates for easy- and hard-saturated prompts plus
/// the controller constants that steer them.
struct ExplorationState {
  double p_e_easy = 0.5;
  double p_e_hard = 0.5;
  double delta_p = 0.01;
  double target_alpha = 0.25;
  double p_min = 0.01;
  double p_max = 1.0;
};

/**
 * Reward-history score P_Rew = p_e^z. With no consecutive saturation
 * (z = 0) the prompt is always eligible: score 1. The exploration rate is
 * chosen by the class of the most recent record in the saturated suffix.
 */
inline double reward_score(const TraceStore& store, PromptId id,
                           const ExplorationState& state) {
  const int z = zero_variance_run_length(store, id);
  if (z == 0) return 1.0;
  const auto last = store.latest(id);
  const double p = last->saturation_class == SaturationClass::easy
                       ? state.p_e_easy
                       : state.p_e_hard;
  return std::pow(p, static_cast<double>(z));
}

/**
 * Entropy score P_Ent: the prompt's most recent response entropy min-max
 * normalized over its raw batch. Degenerate batches (h_max == h_min)
 * score neutral 0.5.
 *
 * @param h     most recent response entropy of this prompt
 * @param h_min batch minimum (over prompts with history)
 * @param h_max batch maximum
 */
inline double entropy_score(double h, double h_min, double h_max) {
  if (h_max < h_min) {
    throw std::invalid_argument("entropy_score: h_max < h_min");
  }
  if (h_max == h_min) return 0.5;
  if (h < h_min - 1e-9 || h > h_max + 1e-9) {
    throw std::invalid_argument("entropy_score: h outside [h_min, h_max]");
  }
  return clamp01((h - h_min) / (h_max - h_min));
}

/// P_select = lambda * P_Rew + (1 - lambda) * P_Ent, lambda in [0, 1].
inline double select_probability(double p_rew, double p_ent, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw std::invalid_argument("select_probability: lambda must be in [0, 1]");
  }
  return lambda * p_rew + (1.0 - lambda) * p_ent;
}

/// Per-prompt scores for one raw batch.
struct PoolScore {
  double p_rew = 1.0;
  double p_ent = 0.5;
  double p_select = 0.75;
};

/**
 * Scores every prompt of a raw batch. Unseen prompts get P_Rew = 1 and
 * neutral P_Ent = 0.5; seen prompts are normalized against the most
 * recent response entropies of the batch's seen members.
 */
inline std::vector<PoolScore> score_pool(const TraceStore& store,
                                         std::span<const PromptId> batch,
                                         const ExplorationState& state,
                                         double lambda) {
  double h_min = 0.0, h_max = 0.0;
  bool any_seen = false;
  for (PromptId id : batch) {
    const auto last = store.latest(id);
    if (!last) continue;
    if (!any_seen) {
      h_min = h_max = last->response_entropy;
      any_seen = true;
    } else {
      h_min = std::min(h_min, last->response_entropy);
      h_max = std::max(h_max, last->response_entropy);
    }
  }
  std::vector<PoolScore> scores;
  scores.reserve(batch.size());
  for (PromptId id : batch) {
    PoolScore s;
    const auto last = store.latest(id);
    if (last) {
      s.p_rew = reward_score(store, id, state);
      s.p_ent = entropy_score(last->response_entropy, h_min, h_max);
    }
    s.p_select = select_probability(s.p_rew, s.p_ent, lambda);
    scores.push_back(s);
  }
  return scores;
}

// ============================================================================
// Candidate sampling
// ============================================================================

struct Stage1Config {
  double lambda = 0.5;
  int target_batch = 32;
  double oversample_factor = 2.0;
  // Raw batch size used for scoring normalization; 0 means
  // ceil(oversample_factor * target_batch).
  int raw_batch_size = 0;
};

inline int stage1_target_count(const Stage1Config& cfg) {
  return static_cast<int>(
      std::ceil(cfg.oversample_factor * static_cast<double>(cfg.target_batch)));
}

inline int stage1_raw_batch(const Stage1Config& cfg) {
  return cfg.raw_batch_size > 0 ? cfg.raw_batch_size : stage1_target_count(cfg);
}

/**
 * Streams raw batches drawn uniformly without replacement within a pass
 * over the dataset (reshuffled between passes) and runs the per-prompt
 * Bernoulli acceptance. Prompts already accepted earlier in the fill are
 * skipped, so the accepted list is duplicate-free.
 *
 * Fails if a complete pass over the dataset accepts nothing: at that
 * point the filter has starved and the caller cannot make progress.
 */
class Stage1Sampler {
 public:
  Stage1Sampler(const TraceStore& store, std::span<const PromptId> dataset,
                const Stage1Config& cfg, const ExplorationState& state,
                std::uint64_t rng_seed)
      : store_(store),
        cfg_(cfg),
        state_(state),
        order_(dataset.begin(), dataset.end()),
        rng_(make_rng(rng_seed)) {
    if (order_.empty()) {
      throw std::invalid_argument("Stage1Sampler: empty dataset");
    }
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  /// Draws and scores the next raw batch; returns the newly accepted ids.
  std::vector<PromptId> next_accepted_batch() {
    const int want = stage1_raw_batch(cfg_);
    std::vector<PromptId> batch;
    batch.reserve(static_cast<std::size_t>(want));
    while (batch.size() < static_cast<std::size_t>(want)) {
      if (cursor_ == order_.size()) {
        ++passes_;
        std::shuffle(order_.begin(), order_.end(), rng_);
        cursor_ = 0;
      }
      batch.push_back(order_[cursor_++]);
    }
    raw_drawn_ += static_cast<long>(batch.size());

    const auto scores = score_pool(store_, batch, state_, cfg_.lambda);
    std::vector<PromptId> accepted;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const double u = unit(rng_);
      if (accepted_set_.count(batch[i]) != 0) continue;
      if (u < scores[i].p_select) {
        accepted.push_back(batch[i]);
        accepted_set_.insert(batch[i]);
      }
    }
    if (accepted.empty()) {
      draws_since_accept_ += static_cast<long>(batch.size());
      if (draws_since_accept_ >= static_cast<long>(order_.size())) {
        throw RunError(
            "stage 1 accepted no prompt across a full pass over the dataset (" +
            std::to_string(order_.size()) +
            " draws); selection probabilities have collapsed");
      }
    } else {
      draws_since_accept_ = 0;
    }
    return accepted;
  }

  long raw_drawn() const { return raw_drawn_; }
  int passes_completed() const { return passes_; }

 private:
  const TraceStore& store_;
  Stage1Config cfg_;
  ExplorationState state_;
  std::vector<PromptId> order_;
  std::mt19937_64 rng_;
  std::size_t cursor_ = 0;
  std::unordered_set<PromptId> accepted_set_;
  long raw_drawn_ = 0;
  int passes_ = 0;
  long draws_since_accept_ = 0;
};

/**
 * Fills the Stage-1 candidate pool: accepts prompts via independent
 * Bernoulli(P_select) draws until ceil(oversample_factor * target_batch)
 * ids are collected. Deterministic given rng_seed.
 */
inline std::vector<PromptId> stage1_fill(const TraceStore& store,
                                         std::span<const PromptId> dataset,
                                         const Stage1Config& cfg,
                                         const ExplorationState& state,
                                         std::uint64_t rng_seed) {
  const int target = stage1_target_count(cfg);
  if (static_cast<long>(dataset.size()) < static_cast<long>(target)) {
    throw std::invalid_argument(
        "stage1_fill: dataset smaller than oversample_factor * target_batch");
  }
  Stage1Sampler sampler(store, dataset, cfg, state, rng_seed);
  std::vector<PromptId> candidates;
  candidates.reserve(static_cast<std::size_t>(target));
  while (candidates.size() < static_cast<std::size_t>(target)) {
    for (PromptId id : sampler.next_accepted_batch()) {
      candidates.push_back(id);
      if (candidates.size() == static_cast<std::size_t>(target)) break;
    }
  }
  return candidates;
}

// ============================================================================
// Exploration controller
// ============================================================================

/**
 * One controller update. For each class c, the observed share of
 * zero-variance groups n_c / n_total is compared against target_alpha:
 * overshoot lowers p_e_c by delta_p, otherwise it rises by delta_p,
 * clamped to [p_min, p_max]. The two classes adapt independently.
 */
inline ExplorationState adapt_exploration(const ExplorationState& state,
                                          int n_easy, int n_hard,
                                          int n_total) {
  if (n_total <= 0) {
    throw std::invalid_argument("adapt_exploration: n_total must be > 0");
  }
  if (n_easy < 0 || n_hard < 0 || n_easy + n_hard > n_total) {
    throw std::invalid_argument(
        "adapt_exploration: require n_easy + n_hard <= n_total");
  }
  ExplorationState next = state;
  const auto steer = [&](double p, int n_c) {
    const double ratio = static_cast<double>(n_c) / n_total;
    p += ratio > state.target_alpha ? -state.delta_p : state.delta_p;
    return std::clamp(p, state.p_min, state.p_max);
  };
  next.p_e_easy = steer(state.p_e_easy, n_easy);
  next.p_e_hard = steer(state.p_e_hard, n_hard);
  return next;
}

}  // namespace edgesel::stage1
