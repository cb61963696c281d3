#pragma once

/**
 * @file util.hpp
 * Shared primitives: prompt identifiers, error types, deterministic
 * seed derivation for independent RNG streams, and small math helpers.
 */

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace edgesel {

using PromptId = std::uint64_t;

/// Raised for malformed configs, CLI arguments, or schema violations.
/// The CLI maps this to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when a run cannot make progress (filter exhaustion, resample
/// cap, unwritable output). The CLI maps this to exit code 2.
struct RunError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ============================================================================
// Deterministic RNG streams
// ============================================================================

/// SplitMix64 step; bijective mixer with good avalanche behavior.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/**
 * Derives a child seed from a base seed plus stream labels. Streams for
 * distinct (tag, a, b) tuples are independent of call order, which keeps
 * runs reproducible even when work is reordered or parallelized.
 */
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0) {
  std::uint64_t h = splitmix64(base ^ 0x6a09e667f3bcc909ULL);
  h = splitmix64(h ^ tag);
  h = splitmix64(h ^ a);
  h = splitmix64(h ^ b);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t seed) {
  return std::mt19937_64{seed};
}

// Stream tags. Arbitrary distinct constants; changing one changes every
// draw downstream of it.
namespace stream {
inline constexpr std::uint64_t kPool = 0x01;
inline constexpr std::uint64_t kStage1 = 0x02;
inline constexpr std::uint64_t kRollout = 0x03;
inline constexpr std::uint64_t kOracle = 0x04;
inline constexpr std::uint64_t kUniformDraw = 0x05;
inline constexpr std::uint64_t kProbeMetric = 0x06;
inline constexpr std::uint64_t kProbeEval = 0x07;
inline constexpr std::uint64_t kTrial = 0x08;
inline constexpr std::uint64_t kReplay = 0x09;
}  // namespace stream

// ============================================================================
// Math helpers
// ============================================================================

inline double sigmoid(double x) {
  if (x >= 0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Binary entropy in nats; 0 at p in {0, 1}.
inline double binary_entropy_nats(double p) {
  if (p <= 0.0 || p >= 1.0) return 0.0;
  return -p * std::log(p) - (1.0 - p) * std::log(1.0 - p);
}

inline double clamp01(double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); }

}  // namespace edgesel
