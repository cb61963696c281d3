#pragma once

/**
 * @file sim.hpp
 * Synthetic single-skill training environment.
 *
 * Prompts carry a scalar difficulty; the policy carries a scalar skill.
 * Success probability follows a logistic curve in (skill - difficulty),
 * rewards are Bernoulli, and response entropy peaks where success is
 * most uncertain. Prompt entropy is tied to expected response entropy
 * through the linear propagation model, so the Stage-2 gate has a real
 * signal to read. Training progress is a skill increment proportional to
 * the mean utility of the trained batch, which closes the loop between
 * prompt selection quality and learning speed.
 *
 * Cost accounting is token-based: a rollout costs G * L_r units per
 * group, gate scoring costs L_p units per scored prompt, and Stage-1
 * history lookups are free.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "edgesel/gate.hpp"
#include "edgesel/grpo.hpp"
#include "edgesel/stage1.hpp"
#include "edgesel/theory.hpp"
#include "edgesel/util.hpp"

namespace edgesel::sim {

// ============================================================================
// Config
// ============================================================================

enum class Selector { uniform, dynamic_sampling, stage1_only, stage2_only, hive };

inline const char* to_string(Selector s) {
  switch (s) {
    case Selector::uniform: return "uniform";
    case Selector::dynamic_sampling: return "dynamic_sampling";
    case Selector::stage1_only: return "stage1_only";
    case Selector::stage2_only: return "stage2_only";
    default: return "hive";
  }
}

inline Selector selector_from_string(const std::string& s) {
  if (s == "uniform") return Selector::uniform;
  if (s == "dynamic_sampling") return Selector::dynamic_sampling;
  if (s == "stage1_only") return Selector::stage1_only;
  if (s == "stage2_only") return Selector::stage2_only;
  if (s == "hive") return Selector::hive;
  throw ConfigError("unknown selector '" + s +
                    "' (expected uniform, dynamic_sampling, stage1_only, "
                    "stage2_only, or hive)");
}

enum class DifficultyDistribution { uniform, trimodal };

inline const char* to_string(DifficultyDistribution d) {
  return d == DifficultyDistribution::uniform ? "uniform" : "trimodal";
}

inline DifficultyDistribution difficulty_distribution_from_string(
    const std::string& s) {
  if (s == "uniform") return DifficultyDistribution::uniform;
  if (s == "trimodal") return DifficultyDistribution::trimodal;
  throw ConfigError("unknown difficulty_distribution '" + s +
                    "' (expected uniform or trimodal)");
}

struct SimConfig {
  std::uint64_t seed = 1;
  Selector selector = Selector::hive;
  int num_prompts = 2000;
  int group_size = 8;
  int target_batch = 32;
  int steps = 300;
  int vocab_size = 4;
  int prompt_length = 64;
  int response_length = 1024;
  double temperature = 1.0;  // recorded in manifests; no effect on dynamics
  double kappa = 4.0;
  double initial_skill = 0.0;
  double learning_rate_proxy = 0.0035;

  // Response entropy shape: expected entropy is
  // (1 - entropy_shrink * sigmoid(skill)) * u0 * h_b(p) + u1.
  double u0 = 1.5;
  double u1 = 0.1;
  double entropy_shrink = 0.5;
  double token_jitter = 0.1;

  theory::PropagationModel propagation{1.0, 0.2, 0.05, 0.02};

  // Stage 1 / exploration controller.
  double lambda = 0.5;
  double oversample_factor = 2.0;
  int raw_batch_size = 0;  // 0 = ceil(oversample_factor * target_batch)
  double p_min = 0.01;
  double p_max = 1.0;
  double p_init_easy = 0.5;
  double p_init_hard = 0.5;
  double delta_p = 0.01;
  double target_alpha = 0.25;

  int max_resample_passes = 64;
  DifficultyDistribution difficulty_distribution = DifficultyDistribution::uniform;
  theory::ResidualMode residual_mode = theory::ResidualMode::adversarial;

  // Verification workload knobs (verify subcommand).
  long verify_trials = 100000;
  long verify_rank_trials = 20000;

  stage1::Stage1Config stage1_config() const {
    return {lambda, target_batch, oversample_factor, raw_batch_size};
  }

  stage1::ExplorationState initial_exploration() const {
    return {p_init_easy, p_init_hard, delta_p, target_alpha, p_min, p_max};
  }

  void validate() const {
    if (target_batch < 1) throw ConfigError("target_batch must be >= 1");
    if (group_size < 2) throw ConfigError("group_size must be >= 2");
    if (num_prompts < 2 * target_batch) {
      throw ConfigError("num_prompts must be >= 2 * target_batch");
    }
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (prompt_length < 2) throw ConfigError("prompt_length must be >= 2");
    if (response_length < 1) throw ConfigError("response_length must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (!(kappa > 0.0)) throw ConfigError("kappa must be > 0");
    if (learning_rate_proxy < 0.0) {
      throw ConfigError("learning_rate_proxy must be >= 0");
    }
    if (!(u0 > 0.0)) throw ConfigError("u0 must be > 0");
    if (u1 < 0.0) throw ConfigError("u1 must be >= 0");
    if (!(entropy_shrink >= 0.0 && entropy_shrink < 1.0)) {
      throw ConfigError("entropy_shrink must be in [0, 1)");
    }
    if (token_jitter < 0.0) throw ConfigError("token_jitter must be >= 0");
    try {
      propagation.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("propagation model: ") + e.what());
    }
    if (!(lambda >= 0.0 && lambda <= 1.0)) {
      throw ConfigError("lambda must be in [0, 1]");
    }
    if (!(oversample_factor >= 1.0)) {
      throw ConfigError("oversample_factor must be >= 1");
    }
    if (raw_batch_size < 0) throw ConfigError("raw_batch_size must be >= 0");
    const int pool_target = stage1::stage1_target_count(stage1_config());
    if (num_prompts < pool_target) {
      throw ConfigError(
          "num_prompts must be >= ceil(oversample_factor * target_batch)");
    }
    if (!(p_min > 0.0)) throw ConfigError("p_min must be > 0");
    if (!(p_max <= 1.0 && p_max >= p_min)) {
      throw ConfigError("p_max must satisfy p_min <= p_max <= 1");
    }
    for (double p : {p_init_easy, p_init_hard}) {
      if (!(p >= p_min && p <= p_max)) {
        throw ConfigError("initial exploration rates must lie in [p_min, p_max]");
      }
    }
    if (delta_p < 0.0) throw ConfigError("delta_p must be >= 0");
    if (!(target_alpha > 0.0 && target_alpha < 1.0)) {
      throw ConfigError("target_alpha must be in (0, 1)");
    }
    if (max_resample_passes < 1) {
      throw ConfigError("max_resample_passes must be >= 1");
    }
    if (verify_trials < 1) throw ConfigError("verify_trials must be >= 1");
    if (verify_rank_trials < 1) {
      throw ConfigError("verify_rank_trials must be >= 1");
    }
  }
};

// ============================================================================
// World state
// ============================================================================

struct SyntheticPrompt {
  PromptId id = 0;
  double difficulty = 0.5;       // in [0, 1]
  int prompt_length = 64;        // L_p >= 2
  int response_length = 1024;    // L_r >= 1
  double base_prompt_offset = 0; // per-prompt representation residual
};

struct PolicySkill {
  double s = 0.0;
  double kappa = 4.0;

  double confidence() const { return sigmoid(s); }
};

/// p = sigmoid(kappa * (s - 2 * (d - 0.5))): difficulty 0.5 is the
/// balance point at skill 0, and the solvable band shifts right as skill
/// grows.
inline double success_probability(const SyntheticPrompt& prompt,
                                  const PolicySkill& skill) {
  return sigmoid(skill.kappa * (skill.s - 2.0 * (prompt.difficulty - 0.5)));
}

/// Expected per-token response entropy: peaked at p = 0.5 via the binary
/// entropy curve, with a floor u1 and a confidence-driven shrink factor
/// so entropy decays as the policy grows certain.
inline double expected_response_entropy(double p, const PolicySkill& skill,
                                        const SimConfig& cfg) {
  const double shrink = 1.0 - cfg.entropy_shrink * sigmoid(skill.s);
  return shrink * cfg.u0 * binary_entropy_nats(p) + cfg.u1;
}

struct GroupRollout {
  std::vector<double> rewards;
  std::vector<grpo::EntropySequence> sequences;
  double response_entropy = 0.0;
};

/// Draws one rollout group: Bernoulli rewards plus per-token entropy
/// sequences jittered around the expected response entropy and clamped
/// to [0, ln vocab_size].
inline GroupRollout generate_rollouts(const SyntheticPrompt& prompt,
                                      const PolicySkill& skill,
                                      const SimConfig& cfg,
                                      std::mt19937_64& rng) {
  const double p = success_probability(prompt, skill);
  const double u_exp = expected_response_entropy(p, skill, cfg);
  const double ln_v = std::log(static_cast<double>(cfg.vocab_size));

  GroupRollout out;
  out.rewards.reserve(static_cast<std::size_t>(cfg.group_size));
  std::bernoulli_distribution success(p);
  for (int k = 0; k < cfg.group_size; ++k) {
    out.rewards.push_back(success(rng) ? 1.0 : 0.0);
  }
  out.sequences.resize(static_cast<std::size_t>(cfg.group_size));
  std::normal_distribution<double> jitter(0.0, cfg.token_jitter);
  for (auto& seq : out.sequences) {
    seq.resize(static_cast<std::size_t>(prompt.response_length));
    for (double& h : seq) {
      const double draw =
          cfg.token_jitter > 0.0 ? u_exp + jitter(rng) : u_exp;
      h = std::clamp(draw, 0.0, ln_v);
    }
  }
  out.response_entropy =
      grpo::response_entropy_summary(out.sequences, cfg.group_size);
  return out;
}

/// Prompt entropy observed by the gate: inverts the propagation model
/// around the prompt's current expected response entropy, with a fresh
/// bounded residual and the prompt's fixed representation offset.
inline double synthesize_prompt_entropy(const SyntheticPrompt& prompt,
                                        const PolicySkill& skill,
                                        const SimConfig& cfg,
                                        std::mt19937_64& rng) {
  const double p = success_probability(prompt, skill);
  const double u_exp = expected_response_entropy(p, skill, cfg);
  const auto& m = cfg.propagation;
  std::uniform_real_distribution<double> xi(-m.epsilon, m.epsilon);
  const double noise = m.epsilon > 0.0 ? xi(rng) : 0.0;
  const double v = (u_exp - m.b - noise) / m.a + prompt.base_prompt_offset;
  const double ln_v = std::log(static_cast<double>(cfg.vocab_size));
  return std::clamp(v, 0.0, ln_v);
}

/// Utility of one trained group: population reward std times (1 + H).
/// Zero-variance groups are worthless regardless of entropy.
inline double utility_signal(const grpo::RewardGroup& rewards,
                             double response_entropy) {
  if (response_entropy < 0.0) {
    throw std::invalid_argument("utility_signal: response entropy >= 0");
  }
  const auto& r = rewards.values();
  const double mean =
      std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  double var = 0.0;
  for (double x : r) var += (x - mean) * (x - mean);
  var /= static_cast<double>(r.size());
  return std::sqrt(var) * (1.0 + response_entropy);
}

/// One proxy policy update: skill rises by lr times the mean utility of
/// the trained batch.
inline PolicySkill skill_update(const PolicySkill& skill,
                                const std::vector<double>& utilities,
                                double learning_rate) {
  if (utilities.empty()) {
    throw std::invalid_argument("skill_update: empty batch");
  }
  if (!(learning_rate > 0.0)) {
    throw std::invalid_argument("skill_update: learning rate must be > 0");
  }
  const double mean =
      std::accumulate(utilities.begin(), utilities.end(), 0.0) /
      static_cast<double>(utilities.size());
  PolicySkill next = skill;
  next.s += learning_rate * mean;
  return next;
}

// ============================================================================
// Telemetry
// ============================================================================

struct StepRow {
  int step = 0;
  long raw_sampled = 0;
  long promoted = 0;
  long rollouts = 0;
  long effective_rollouts = 0;
  double zero_var_easy_ratio = 0.0;
  double zero_var_hard_ratio = 0.0;
  double gamma = std::numeric_limits<double>::quiet_NaN();
  double p_e_easy = 0.0;
  double p_e_hard = 0.0;
  double skill = 0.0;
  long long cumulative_cost_units = 0;
  long long cumulative_rollouts = 0;
};

struct Telemetry {
  std::vector<StepRow> rows;

  double final_skill() const { return rows.empty() ? 0.0 : rows.back().skill; }
  long long total_rollouts() const {
    return rows.empty() ? 0 : rows.back().cumulative_rollouts;
  }
  long long total_cost_units() const {
    return rows.empty() ? 0 : rows.back().cumulative_cost_units;
  }
  double effective_ratio() const {
    long long eff = 0, all = 0;
    for (const auto& r : rows) {
      eff += r.effective_rollouts;
      all += r.rollouts;
    }
    return all == 0 ? 0.0 : static_cast<double>(eff) / static_cast<double>(all);
  }
};

// ============================================================================
// Training loop
// ============================================================================

/// Gate oracle backed by the synthetic world: scores a prompt's current
/// entropy with a fresh residual from a per-(step, id) stream, so scores
/// are independent of scoring order.
class SyntheticOracle final : public gate::EntropyOracle {
 public:
  SyntheticOracle(const SimConfig& cfg,
                  const std::vector<SyntheticPrompt>& prompts,
                  const PolicySkill& skill, int step_idx)
      : cfg_(cfg), prompts_(prompts), skill_(skill), step_idx_(step_idx) {}

  std::optional<gate::PromptScore> score(PromptId id) override {
    const auto& prompt = prompts_[static_cast<std::size_t>(id)];
    auto rng =
        make_rng(derive_seed(cfg_.seed, stream::kOracle, step_idx_, id));
    const double v = synthesize_prompt_entropy(prompt, skill_, cfg_, rng);
    return gate::PromptScore{v, prompt.prompt_length};
  }

 private:
  const SimConfig& cfg_;
  const std::vector<SyntheticPrompt>& prompts_;
  const PolicySkill& skill_;
  int step_idx_;
};

/// Outcome of rolling out one prompt group within a step.
struct GroupOutcome {
  PromptId id = 0;
  std::vector<double> rewards;
  double response_entropy = 0.0;
  double accuracy = 0.0;
  double utility = 0.0;
  bool zero_variance = false;
  stage1::SaturationClass saturation = stage1::SaturationClass::mixed;
};

class TrainingLoop {
 public:
  using Observer = std::function<void(int step, const GroupOutcome&)>;

  explicit TrainingLoop(SimConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    skill_ = {cfg_.initial_skill, cfg_.kappa};
    exploration_ = cfg_.initial_exploration();
    build_pool();
  }

  void set_observer(Observer obs) { observer_ = std::move(obs); }

  int current_step() const { return step_; }
  const SimConfig& config() const { return cfg_; }
  const PolicySkill& skill() const { return skill_; }
  const std::vector<SyntheticPrompt>& prompts() const { return prompts_; }
  const stage1::TraceStore& trace() const { return trace_; }
  const stage1::ExplorationState& exploration() const { return exploration_; }
  const Telemetry& telemetry() const { return telemetry_; }

  void run() {
    while (step_ < cfg_.steps) step();
  }

  void step() {
    const int step_idx = step_;
    double gamma = std::numeric_limits<double>::quiet_NaN();
    long raw_sampled = 0;
    long long scoring_cost = 0;
    std::vector<GroupOutcome> rolled;
    std::vector<const GroupOutcome*> trained;

    switch (cfg_.selector) {
      case Selector::uniform: {
        const auto ids = draw_uniform(cfg_.target_batch, step_idx);
        raw_sampled = static_cast<long>(ids.size());
        roll_ids(ids, step_idx, rolled);
        for (const auto& g : rolled) trained.push_back(&g);
        break;
      }
      case Selector::dynamic_sampling: {
        // Resample uniformly (without replacement within the step) until
        // the batch holds target_batch effective groups; every sampled
        // group is rolled out and paid for.
        auto order = shuffled_pool(step_idx);
        std::size_t cursor = 0;
        int effective = 0;
        int passes = 0;
        while (effective < cfg_.target_batch) {
          if (passes == cfg_.max_resample_passes ||
              cursor == order.size()) {
            throw RunError(
                "dynamic sampling could not fill an effective batch at step " +
                std::to_string(step_idx) + " (" + std::to_string(effective) +
                "/" + std::to_string(cfg_.target_batch) + " effective)");
          }
          ++passes;
          std::vector<PromptId> chunk;
          while (chunk.size() < static_cast<std::size_t>(cfg_.target_batch) &&
                 cursor < order.size()) {
            chunk.push_back(order[cursor++]);
          }
          raw_sampled += static_cast<long>(chunk.size());
          const std::size_t before = rolled.size();
          roll_ids(chunk, step_idx, rolled);
          for (std::size_t i = before; i < rolled.size(); ++i) {
            if (!rolled[i].zero_variance) ++effective;
          }
        }
        for (const auto& g : rolled) {
          if (trained.size() == static_cast<std::size_t>(cfg_.target_batch)) {
            break;
          }
          if (!g.zero_variance) trained.push_back(&g);
        }
        break;
      }
      case Selector::stage1_only: {
        // History filter in front of the resampling loop: the acceptance
        // decision is made per prompt before any rollout, so accepted
        // prompts roll out one at a time and the batch closes the moment
        // target_batch of them are effective. Accepted ids left over at
        // that point were never rolled and cost nothing.
        stage1::Stage1Sampler sampler(
            trace_, prompts_ids_, cfg_.stage1_config(), exploration_,
            derive_seed(cfg_.seed, stream::kStage1, step_idx));
        int effective = 0;
        const long rolled_cap =
            static_cast<long>(cfg_.max_resample_passes) * cfg_.target_batch;
        while (effective < cfg_.target_batch) {
          if (static_cast<long>(rolled.size()) > rolled_cap) {
            throw RunError(
                "stage 1 stream could not fill an effective batch at step " +
                std::to_string(step_idx));
          }
          const auto accepted = sampler.next_accepted_batch();
          for (PromptId id : accepted) {
            const std::size_t before = rolled.size();
            roll_ids(std::span<const PromptId>(&id, 1), step_idx, rolled);
            if (!rolled[before].zero_variance) ++effective;
            if (effective == cfg_.target_batch) break;
          }
        }
        raw_sampled = sampler.raw_drawn();
        for (const auto& g : rolled) {
          if (trained.size() == static_cast<std::size_t>(cfg_.target_batch)) {
            break;
          }
          if (!g.zero_variance) trained.push_back(&g);
        }
        break;
      }
      case Selector::stage2_only: {
        const int pool_size = stage1::stage1_target_count(cfg_.stage1_config());
        const auto pool = draw_uniform(pool_size, step_idx);
        raw_sampled = static_cast<long>(pool.size());
        SyntheticOracle oracle(cfg_, prompts_, skill_, step_idx);
        const auto result = gate::apply_gate(pool, oracle);
        gamma = result.gamma;
        scoring_cost = result.scoring_cost_units;
        roll_ids(result.promoted, step_idx, rolled);
        for (const auto& g : rolled) trained.push_back(&g);
        break;
      }
      case Selector::hive: {
        stage1::Stage1Sampler sampler(
            trace_, prompts_ids_, cfg_.stage1_config(), exploration_,
            derive_seed(cfg_.seed, stream::kStage1, step_idx));
        const int want = stage1::stage1_target_count(cfg_.stage1_config());
        std::vector<PromptId> candidates;
        candidates.reserve(static_cast<std::size_t>(want));
        while (candidates.size() < static_cast<std::size_t>(want)) {
          for (PromptId id : sampler.next_accepted_batch()) {
            candidates.push_back(id);
            if (candidates.size() == static_cast<std::size_t>(want)) break;
          }
        }
        raw_sampled = sampler.raw_drawn();
        SyntheticOracle oracle(cfg_, prompts_, skill_, step_idx);
        const auto result = gate::apply_gate(candidates, oracle);
        gamma = result.gamma;
        scoring_cost = result.scoring_cost_units;
        roll_ids(result.promoted, step_idx, rolled);
        for (const auto& g : rolled) trained.push_back(&g);
        break;
      }
    }

    // Train on the selected batch.
    if (cfg_.learning_rate_proxy > 0.0 && !trained.empty()) {
      std::vector<double> utilities;
      utilities.reserve(trained.size());
      for (const auto* g : trained) utilities.push_back(g->utility);
      skill_ = skill_update(skill_, utilities, cfg_.learning_rate_proxy);
    }

    // Commit this epoch's observations to the trace.
    int n_easy = 0, n_hard = 0, eff_groups = 0;
    for (const auto& g : rolled) {
      stage1::record_epoch(trace_, g.id, grpo::RewardGroup(g.rewards),
                           g.response_entropy);
      if (g.zero_variance) {
        if (g.saturation == stage1::SaturationClass::easy) ++n_easy;
        else ++n_hard;
      } else {
        ++eff_groups;
      }
    }

    // Steer exploration rates on the observed saturation shares.
    const bool stage1_active = cfg_.selector == Selector::stage1_only ||
                               cfg_.selector == Selector::hive;
    if (stage1_active && !rolled.empty()) {
      exploration_ = stage1::adapt_exploration(
          exploration_, n_easy, n_hard, static_cast<int>(rolled.size()));
    }

    const long rollouts = static_cast<long>(rolled.size()) * cfg_.group_size;
    cumulative_rollouts_ += rollouts;
    cumulative_cost_ += static_cast<long long>(rollouts) * cfg_.response_length;
    cumulative_cost_ += scoring_cost;

    StepRow row;
    row.step = step_idx;
    row.raw_sampled = raw_sampled;
    row.promoted = static_cast<long>(trained.size());
    row.rollouts = rollouts;
    row.effective_rollouts = static_cast<long>(eff_groups) * cfg_.group_size;
    row.zero_var_easy_ratio =
        rolled.empty() ? 0.0 : static_cast<double>(n_easy) / rolled.size();
    row.zero_var_hard_ratio =
        rolled.empty() ? 0.0 : static_cast<double>(n_hard) / rolled.size();
    row.gamma = gamma;
    row.p_e_easy = exploration_.p_e_easy;
    row.p_e_hard = exploration_.p_e_hard;
    row.skill = skill_.s;
    row.cumulative_cost_units = cumulative_cost_;
    row.cumulative_rollouts = cumulative_rollouts_;
    telemetry_.rows.push_back(row);
    ++step_;
  }

  /// Out-of-band utility probe of every prompt at the current skill.
  /// Draws come from a stream keyed by (tag, step, id), so probes at the
  /// same nominal step reproduce exactly and never disturb training.
  std::vector<double> probe_utilities(std::uint64_t tag, int step_idx) const {
    std::vector<double> utilities;
    utilities.reserve(prompts_.size());
    for (const auto& prompt : prompts_) {
      auto rng =
          make_rng(derive_seed(cfg_.seed, tag, step_idx, prompt.id));
      const auto roll = generate_rollouts(prompt, skill_, cfg_, rng);
      utilities.push_back(
          utility_signal(grpo::RewardGroup(roll.rewards), roll.response_entropy));
    }
    return utilities;
  }

 private:
  void build_pool() {
    auto rng = make_rng(derive_seed(cfg_.seed, stream::kPool));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const auto& m = cfg_.propagation;
    std::uniform_real_distribution<double> offset(-m.delta, m.delta);
    prompts_.reserve(static_cast<std::size_t>(cfg_.num_prompts));
    for (int i = 0; i < cfg_.num_prompts; ++i) {
      SyntheticPrompt prompt;
      prompt.id = static_cast<PromptId>(i);
      if (cfg_.difficulty_distribution == DifficultyDistribution::uniform) {
        prompt.difficulty = unit(rng);
      } else {
        // Saturation-heavy mix: two near-saturated lobes plus a solvable
        // core, used by the controller's stationary scenario.
        const double u = unit(rng);
        if (u < 0.4) {
          prompt.difficulty = 0.05 + 0.1 * unit(rng);
        } else if (u < 0.8) {
          prompt.difficulty = 0.85 + 0.1 * unit(rng);
        } else {
          prompt.difficulty = 0.45 + 0.1 * unit(rng);
        }
      }
      prompt.prompt_length = cfg_.prompt_length;
      prompt.response_length = cfg_.response_length;
      prompt.base_prompt_offset = m.delta > 0.0 ? offset(rng) : 0.0;
      prompts_.push_back(prompt);
      prompts_ids_.push_back(prompt.id);
    }
  }

  std::vector<PromptId> shuffled_pool(int step_idx) const {
    auto rng =
        make_rng(derive_seed(cfg_.seed, stream::kUniformDraw, step_idx));
    std::vector<PromptId> order = prompts_ids_;
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  std::vector<PromptId> draw_uniform(int count, int step_idx) const {
    auto order = shuffled_pool(step_idx);
    order.resize(static_cast<std::size_t>(
        std::min<long>(count, static_cast<long>(order.size()))));
    return order;
  }

  void roll_ids(std::span<const PromptId> ids, int step_idx,
                std::vector<GroupOutcome>& out) {
    for (PromptId id : ids) {
      const auto& prompt = prompts_[static_cast<std::size_t>(id)];
      auto rng = make_rng(derive_seed(cfg_.seed, stream::kRollout,
                                      step_idx, id));
      auto roll = generate_rollouts(prompt, skill_, cfg_, rng);
      GroupOutcome g;
      g.id = id;
      g.rewards = std::move(roll.rewards);
      g.response_entropy = roll.response_entropy;
      g.accuracy = std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0) /
                   static_cast<double>(g.rewards.size());
      const grpo::RewardGroup group(g.rewards);
      g.zero_variance = grpo::is_zero_variance(group);
      g.utility = utility_signal(group, g.response_entropy);
      if (g.zero_variance) {
        g.saturation = g.rewards.front() >= 0.5
                           ? stage1::SaturationClass::easy
                           : stage1::SaturationClass::hard;
      }
      if (observer_) observer_(step_idx, g);
      out.push_back(std::move(g));
    }
  }

  SimConfig cfg_;
  PolicySkill skill_;
  stage1::ExplorationState exploration_;
  stage1::TraceStore trace_;
  std::vector<SyntheticPrompt> prompts_;
  std::vector<PromptId> prompts_ids_;
  Telemetry telemetry_;
  Observer observer_;
  long long cumulative_cost_ = 0;
  long long cumulative_rollouts_ = 0;
  int step_ = 0;
};

inline Telemetry run_training(const SimConfig& cfg) {
  TrainingLoop loop(cfg);
  loop.run();
  return loop.telemetry();
}

// ============================================================================
// Experiments
// ============================================================================

struct StalenessResult {
  double historical_median = 0.0;
  double online_median = 0.0;
  int snapshot_step = 0;
  int evaluation_step = 0;
};

/**
 * Measures metadata staleness: rank all prompts by a utility probe taken
 * lag steps before the end of the run (historical) and by a probe at the
 * end (online), then compare the realized utility of the two top-fraction
 * selections on a shared evaluation probe at the end. With lag 0 the two
 * selections coincide and the medians are equal.
 */
inline StalenessResult staleness_experiment(const SimConfig& cfg, int lag,
                                            double top_fraction) {
  cfg.validate();
  if (lag < 0) throw ConfigError("staleness lag must be >= 0");
  if (cfg.steps < lag) {
    throw ConfigError("staleness requires steps >= lag");
  }
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) {
    throw ConfigError("staleness top fraction must be in (0, 1]");
  }

  TrainingLoop loop(cfg);
  const int snapshot = cfg.steps - lag;
  while (loop.current_step() < snapshot) loop.step();
  const auto historical_metric =
      loop.probe_utilities(stream::kProbeMetric, snapshot);
  while (loop.current_step() < cfg.steps) loop.step();
  const auto online_metric =
      loop.probe_utilities(stream::kProbeMetric, cfg.steps);
  const auto realized = loop.probe_utilities(stream::kProbeEval, cfg.steps);

  const std::size_t n = historical_metric.size();
  std::size_t k = static_cast<std::size_t>(top_fraction * n);
  if (k < 1) k = 1;

  const auto top_realized = [&](const std::vector<double>& metric) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::nth_element(idx.begin(), idx.begin() + (k - 1), idx.end(),
                     [&](std::size_t a, std::size_t b) {
                       if (metric[a] != metric[b]) return metric[a] > metric[b];
                       return a < b;
                     });
    std::vector<double> values;
    values.reserve(k);
    for (std::size_t i = 0; i < k; ++i) values.push_back(realized[idx[i]]);
    return values;
  };

  const auto median_of = [](std::vector<double> v) {
    return gate::median_threshold(std::move(v));
  };

  StalenessResult result;
  result.snapshot_step = snapshot;
  result.evaluation_step = cfg.steps;
  result.historical_median = median_of(top_realized(historical_metric));
  result.online_median = median_of(top_realized(online_metric));
  return result;
}

struct Heatmap {
  int difficulty_bins = 0;
  int entropy_bins = 0;
  std::vector<double> accuracy_edges;  // difficulty_bins + 1, over [0, 1]
  std::vector<double> entropy_edges;   // entropy_bins + 1, observed range
  std::vector<double> mean_utility;    // row-major; NaN where empty
  std::vector<long> counts;

  double cell(int d, int e) const {
    return mean_utility[static_cast<std::size_t>(d) * entropy_bins + e];
  }
  long count(int d, int e) const {
    return counts[static_cast<std::size_t>(d) * entropy_bins + e];
  }
};

/**
 * Runs training under the given config and bins every observed rollout
 * group by (empirical accuracy, response entropy), averaging the utility
 * signal per cell. Cells nothing fell into stay empty (NaN) rather than
 * zero.
 */
inline Heatmap utility_heatmap(const SimConfig& cfg, int difficulty_bins,
                               int entropy_bins) {
  cfg.validate();
  if (difficulty_bins < 2 || entropy_bins < 2) {
    throw ConfigError("heatmap bins must be >= 2");
  }

  struct Sample {
    double accuracy, entropy, utility;
  };
  std::vector<Sample> samples;
  TrainingLoop loop(cfg);
  loop.set_observer([&](int, const GroupOutcome& g) {
    samples.push_back({g.accuracy, g.response_entropy, g.utility});
  });
  loop.run();
  if (samples.empty()) {
    throw RunError("heatmap observed no rollout groups (steps == 0?)");
  }

  Heatmap map;
  map.difficulty_bins = difficulty_bins;
  map.entropy_bins = entropy_bins;

  double h_min = samples.front().entropy, h_max = h_min;
  for (const auto& s : samples) {
    h_min = std::min(h_min, s.entropy);
    h_max = std::max(h_max, s.entropy);
  }
  if (h_max == h_min) h_max = h_min + 1e-9;

  for (int i = 0; i <= difficulty_bins; ++i) {
    map.accuracy_edges.push_back(static_cast<double>(i) / difficulty_bins);
  }
  for (int i = 0; i <= entropy_bins; ++i) {
    map.entropy_edges.push_back(h_min + (h_max - h_min) * i / entropy_bins);
  }

  const std::size_t cells =
      static_cast<std::size_t>(difficulty_bins) * entropy_bins;
  std::vector<double> sums(cells, 0.0);
  map.counts.assign(cells, 0);
  for (const auto& s : samples) {
    int d = static_cast<int>(s.accuracy * difficulty_bins);
    if (d == difficulty_bins) d = difficulty_bins - 1;
    int e = static_cast<int>((s.entropy - h_min) / (h_max - h_min) *
                             entropy_bins);
    if (e == entropy_bins) e = entropy_bins - 1;
    const std::size_t at = static_cast<std::size_t>(d) * entropy_bins + e;
    sums[at] += s.utility;
    ++map.counts[at];
  }
  map.mean_utility.assign(cells, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < cells; ++i) {
    if (map.counts[i] > 0) map.mean_utility[i] = sums[i] / map.counts[i];
  }
  return map;
}

}  // namespace edgesel::sim
