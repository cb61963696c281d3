#pragma once

/**
 * @file config.hpp
 * JSON run configuration: defaults, strict parsing (unknown keys are
 * errors), validation with key-level messages, the EDGE_SELECT_SEED
 * environment override, and run manifests that make every output
 * reproducible byte for byte.
 */

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "edgesel/sim.hpp"
#include "edgesel/util.hpp"

namespace edgesel::config {

inline constexpr const char* kArtifactVersion = "0.1.0";

// ============================================================================
// Serialization
// ============================================================================

/// Fully resolved config as JSON (every key present, defaults filled in).
inline nlohmann::json to_json(const sim::SimConfig& cfg) {
  return {
      {"seed", cfg.seed},
      {"selector", sim::to_string(cfg.selector)},
      {"num_prompts", cfg.num_prompts},
      {"group_size", cfg.group_size},
      {"target_batch", cfg.target_batch},
      {"steps", cfg.steps},
      {"vocab_size", cfg.vocab_size},
      {"prompt_length", cfg.prompt_length},
      {"response_length", cfg.response_length},
      {"temperature", cfg.temperature},
      {"kappa", cfg.kappa},
      {"initial_skill", cfg.initial_skill},
      {"learning_rate_proxy", cfg.learning_rate_proxy},
      {"u0", cfg.u0},
      {"u1", cfg.u1},
      {"entropy_shrink", cfg.entropy_shrink},
      {"token_jitter", cfg.token_jitter},
      {"prop_a", cfg.propagation.a},
      {"prop_b", cfg.propagation.b},
      {"prop_epsilon", cfg.propagation.epsilon},
      {"prop_delta", cfg.propagation.delta},
      {"lambda", cfg.lambda},
      {"oversample_factor", cfg.oversample_factor},
      {"raw_batch_size", cfg.raw_batch_size},
      {"p_min", cfg.p_min},
      {"p_max", cfg.p_max},
      {"p_init_easy", cfg.p_init_easy},
      {"p_init_hard", cfg.p_init_hard},
      {"delta_p", cfg.delta_p},
      {"target_alpha", cfg.target_alpha},
      {"max_resample_passes", cfg.max_resample_passes},
      {"difficulty_distribution", sim::to_string(cfg.difficulty_distribution)},
      {"residual_mode",
       cfg.residual_mode == theory::ResidualMode::adversarial ? "adversarial"
                                                              : "uniform"},
      {"verify_trials", cfg.verify_trials},
      {"verify_rank_trials", cfg.verify_rank_trials},
  };
}

/// Parses a config object. Unknown keys and wrong types are ConfigErrors
/// naming the key; missing keys keep their defaults; the merged result is
/// validated before it is returned.
inline sim::SimConfig from_json(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw ConfigError("config root must be a JSON object");
  }
  sim::SimConfig cfg;
  const auto get = [&](const char* key, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = j.at(key).get<std::remove_reference_t<decltype(out)>>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(std::string("config key '") + key +
                        "' has the wrong type");
    }
  };
  static const std::vector<std::string> known = {
      "seed", "selector", "num_prompts", "group_size", "target_batch",
      "steps", "vocab_size", "prompt_length", "response_length",
      "temperature", "kappa", "initial_skill", "learning_rate_proxy", "u0",
      "u1", "entropy_shrink", "token_jitter", "prop_a", "prop_b",
      "prop_epsilon", "prop_delta", "lambda", "oversample_factor",
      "raw_batch_size", "p_min", "p_max", "p_init_easy", "p_init_hard",
      "delta_p", "target_alpha", "max_resample_passes",
      "difficulty_distribution", "residual_mode", "verify_trials",
      "verify_rank_trials"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }

  get("seed", cfg.seed);
  if (j.contains("selector")) {
    std::string s;
    get("selector", s);
    cfg.selector = sim::selector_from_string(s);
  }
  get("num_prompts", cfg.num_prompts);
  get("group_size", cfg.group_size);
  get("target_batch", cfg.target_batch);
  get("steps", cfg.steps);
  get("vocab_size", cfg.vocab_size);
  get("prompt_length", cfg.prompt_length);
  get("response_length", cfg.response_length);
  get("temperature", cfg.temperature);
  get("kappa", cfg.kappa);
  get("initial_skill", cfg.initial_skill);
  get("learning_rate_proxy", cfg.learning_rate_proxy);
  get("u0", cfg.u0);
  get("u1", cfg.u1);
  get("entropy_shrink", cfg.entropy_shrink);
  get("token_jitter", cfg.token_jitter);
  get("prop_a", cfg.propagation.a);
  get("prop_b", cfg.propagation.b);
  get("prop_epsilon", cfg.propagation.epsilon);
  get("prop_delta", cfg.propagation.delta);
  get("lambda", cfg.lambda);
  get("oversample_factor", cfg.oversample_factor);
  get("raw_batch_size", cfg.raw_batch_size);
  get("p_min", cfg.p_min);
  get("p_max", cfg.p_max);
  get("p_init_easy", cfg.p_init_easy);
  get("p_init_hard", cfg.p_init_hard);
  get("delta_p", cfg.delta_p);
  get("target_alpha", cfg.target_alpha);
  get("max_resample_passes", cfg.max_resample_passes);
  if (j.contains("difficulty_distribution")) {
    std::string s;
    get("difficulty_distribution", s);
    cfg.difficulty_distribution = sim::difficulty_distribution_from_string(s);
  }
  if (j.contains("residual_mode")) {
    std::string s;
    get("residual_mode", s);
    if (s == "adversarial") {
      cfg.residual_mode = theory::ResidualMode::adversarial;
    } else if (s == "uniform") {
      cfg.residual_mode = theory::ResidualMode::uniform;
    } else {
      throw ConfigError("residual_mode must be 'adversarial' or 'uniform'");
    }
  }
  get("verify_trials", cfg.verify_trials);
  get("verify_rank_trials", cfg.verify_rank_trials);

  cfg.validate();
  return cfg;
}

// ============================================================================
// File loading
// ============================================================================

namespace detail {

/// Maps a byte offset from the JSON parser to 1-based line and column.
inline std::pair<std::size_t, std::size_t> line_column(const std::string& text,
                                                       std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline std::uint64_t parse_env_seed(const char* env) {
  const std::string text(env);
  std::size_t used = 0;
  std::uint64_t seed = 0;
  try {
    seed = std::stoull(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty() || text[0] == '-') {
    throw ConfigError("EDGE_SELECT_SEED must be an unsigned integer, got '" +
                      text + "'");
  }
  return seed;
}

}  // namespace detail

/// True when the JSON document is a run manifest rather than a bare
/// config (manifests embed the config under "config").
inline bool is_manifest(const nlohmann::json& j) {
  return j.is_object() && j.contains("artifact_version") && j.contains("config");
}

/**
 * Loads a config (or a previously written manifest) from disk. Parse
 * errors report line and column. When EDGE_SELECT_SEED is set in the
 * environment it overrides the config's seed, so the resolved seed always
 * lands in the manifest.
 */
inline sim::SimConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    const auto [line, col] = detail::line_column(text, e.byte ? e.byte - 1 : 0);
    throw ConfigError(path + ":" + std::to_string(line) + ":" +
                      std::to_string(col) + ": JSON parse error: " + e.what());
  }
  sim::SimConfig cfg =
      is_manifest(j) ? from_json(j.at("config")) : from_json(j);
  if (const char* env = std::getenv("EDGE_SELECT_SEED");
      env != nullptr && *env != '\0') {
    cfg.seed = detail::parse_env_seed(env);
  }
  return cfg;
}

/// Seed for commands that take no config file: the EDGE_SELECT_SEED
/// environment override when present, otherwise the fallback.
inline std::uint64_t resolve_env_seed(std::uint64_t fallback) {
  if (const char* env = std::getenv("EDGE_SELECT_SEED");
      env != nullptr && *env != '\0') {
    return detail::parse_env_seed(env);
  }
  return fallback;
}

// ============================================================================
// Manifests
// ============================================================================

/// Builds the manifest document for a finished or about-to-run command.
/// outputs maps logical names to file names relative to the manifest.
inline nlohmann::json make_manifest(
    const sim::SimConfig& cfg, const std::string& command,
    const std::vector<std::pair<std::string, std::string>>& outputs) {
  nlohmann::json out_obj = nlohmann::json::object();
  for (const auto& [name, file] : outputs) out_obj[name] = file;
  return {
      {"artifact_version", kArtifactVersion},
      {"command", command},
      {"seed", cfg.seed},
      {"config", to_json(cfg)},
      {"outputs", out_obj},
  };
}

}  // namespace edgesel::config
