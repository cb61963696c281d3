#pragma once

/**
 * @file theory.hpp
 * Monte Carlo verification of the selection gate's statistical guarantees.
 *
 * The gate ranks prompts by an entropy estimate averaged over n rollouts.
 * Token entropies live in [0, ln|V|], so Hoeffding gives a concentration
 * radius eta(alpha) for the estimate around its mean. Combined with a
 * linear entropy-propagation model (response entropy = a * prompt signal
 * + b up to bounded residuals), a sufficient observable margin makes the
 * estimated ranking agree with the true utility ranking with probability
 * at least 1 - 2*alpha. The routines here generate synthetic instances at
 * (or inside) the residual bounds and measure how often those guarantees
 * hold empirically.
 */

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <vector>

#include "edgesel/util.hpp"

namespace edgesel::theory {

// ============================================================================
// Specs
// ============================================================================

/// Rollout-estimate setting: n rollouts over a vocabulary of size
/// vocab_size, confidence level alpha_conf, Monte Carlo trial count.
struct ConcentrationSpec {
  int n = 8;
  int vocab_size = 4;
  double alpha_conf = 0.05;
  long trials = 100000;

  void validate() const {
    if (n < 1) throw std::invalid_argument("ConcentrationSpec: n >= 1");
    if (vocab_size < 2) {
      throw std::invalid_argument("ConcentrationSpec: vocab_size >= 2");
    }
    if (!(alpha_conf > 0.0 && alpha_conf < 1.0)) {
      throw std::invalid_argument("ConcentrationSpec: alpha_conf in (0, 1)");
    }
    if (trials < 1) throw std::invalid_argument("ConcentrationSpec: trials >= 1");
  }
};

/// Linear propagation from prompt-side signal to response-side signal:
/// S_resp = a * S_prompt + b + xi with |xi| <= epsilon, plus
/// representation residuals bounded by delta on both observables.
struct PropagationModel {
  double a = 1.0;
  double b = 0.0;
  double epsilon = 0.0;
  double delta = 0.0;

  void validate() const {
    if (!(a > 0.0)) throw std::invalid_argument("PropagationModel: a > 0");
    if (epsilon < 0.0 || delta < 0.0) {
      throw std::invalid_argument("PropagationModel: residual bounds >= 0");
    }
  }
};

/// How bounded residuals are drawn: pinned to the bound with a random
/// sign (worst case), or uniform inside the bound.
enum class ResidualMode { adversarial, uniform };

/// Synthetic rollout-entropy population used by the concentration check.
enum class EntropyDist { two_point_extremes, point_mass };

// ============================================================================
// Bounds
// ============================================================================

/// Concentration radius eta(alpha) = ln|V| * sqrt(ln(2/alpha) / (2n)).
inline double hoeffding_eta(int n, int vocab_size, double alpha_conf) {
  ConcentrationSpec{n, vocab_size, alpha_conf, 1}.validate();
  const double ln_v = std::log(static_cast<double>(vocab_size));
  return ln_v * std::sqrt(std::log(2.0 / alpha_conf) / (2.0 * n));
}

/// Two-sided Hoeffding failure bound 2 * exp(-2 n eta^2 / ln^2|V|).
/// Evaluates to alpha when eta = hoeffding_eta(n, vocab, alpha).
inline double hoeffding_failure_bound(int n, int vocab_size, double eta) {
  const double ln_v = std::log(static_cast<double>(vocab_size));
  return 2.0 * std::exp(-2.0 * n * eta * eta / (ln_v * ln_v));
}

/// Sufficient observable margin for rank agreement:
/// 2*epsilon + 2*(a + 1)*delta + 2*eta.
inline double rank_margin_bound(const PropagationModel& model, double eta) {
  model.validate();
  if (eta < 0.0) throw std::invalid_argument("rank_margin_bound: eta >= 0");
  return 2.0 * model.epsilon + 2.0 * (model.a + 1.0) * model.delta + 2.0 * eta;
}

// ============================================================================
// Concentration check
// ============================================================================

/**
 * Empirical probability that an n-rollout entropy mean deviates from its
 * true mean by more than eta. Rollout entropies are drawn iid from a
 * fixed distribution supported on [0, ln|V|] with known mean: either the
 * worst-case two-point distribution on {0, ln|V|} or a degenerate point
 * mass (which can never deviate).
 */
inline double concentration_failure_rate(
    const ConcentrationSpec& spec, double eta, std::uint64_t rng_seed,
    EntropyDist dist = EntropyDist::two_point_extremes) {
  spec.validate();
  if (eta < 0.0) {
    throw std::invalid_argument("concentration_failure_rate: eta >= 0");
  }
  const double ln_v = std::log(static_cast<double>(spec.vocab_size));
  const double mean = 0.5 * ln_v;
  long failures = 0;
  for (long t = 0; t < spec.trials; ++t) {
    auto rng = make_rng(derive_seed(rng_seed, stream::kTrial, t));
    double sum = 0.0;
    if (dist == EntropyDist::two_point_extremes) {
      std::bernoulli_distribution coin(0.5);
      for (int i = 0; i < spec.n; ++i) {
        sum += coin(rng) ? ln_v : 0.0;
      }
    } else {
      sum = mean * spec.n;
    }
    const double estimate = sum / spec.n;
    if (std::abs(estimate - mean) > eta) ++failures;
  }
  return static_cast<double>(failures) / static_cast<double>(spec.trials);
}

// ============================================================================
// Rank consistency check
// ============================================================================

namespace detail {

/// Residual draw in [-bound, bound]. Adversarial mode pins to the bound;
/// the sign is supplied by the caller (worst-case direction) in that mode.
inline double draw_residual(double bound, ResidualMode mode, double adv_sign,
                            std::mt19937_64& rng) {
  if (bound == 0.0) return 0.0;
  if (mode == ResidualMode::adversarial) return adv_sign * bound;
  std::uniform_real_distribution<double> d(-bound, bound);
  return d(rng);
}

/// Mean of n draws from a symmetric two-point distribution centered at
/// mean, stretched to the widest width that keeps support in [0, hi].
inline double sample_entropy_mean(double mean, double hi, int n,
                                  std::mt19937_64& rng) {
  const double w = std::min(mean, hi - mean);
  if (w <= 0.0) return mean;
  std::bernoulli_distribution coin(0.5);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    sum += coin(rng) ? mean + w : mean - w;
  }
  return sum / n;
}

}  // namespace detail

/**
 * Empirical rank-agreement rate under the propagation model. Each trial
 * synthesizes a prompt pair whose observable entropy gap satisfies
 * a * |dV| > margin_multiplier * rank_margin_bound, pushes the pair
 * through the propagation chain with bounded residuals, estimates each
 * response entropy from n rollouts, and checks that the estimated
 * ordering matches the observable prompt-entropy ordering. For
 * margin_multiplier > 1 the guarantee is a rate of at least
 * 1 - 2 * alpha_conf.
 *
 * Fails if no valid gap fits inside the entropy range [0, ln|V|].
 */
inline double rank_consistency_rate(const PropagationModel& model,
                                    const ConcentrationSpec& spec,
                                    double margin_multiplier, long trials,
                                    std::uint64_t rng_seed,
                                    ResidualMode mode = ResidualMode::adversarial) {
  model.validate();
  spec.validate();
  if (margin_multiplier < 1.0) {
    throw std::invalid_argument(
        "rank_consistency_rate: margin_multiplier >= 1");
  }
  if (trials < 1) {
    throw std::invalid_argument("rank_consistency_rate: trials >= 1");
  }
  const double ln_v = std::log(static_cast<double>(spec.vocab_size));
  const double eta = hoeffding_eta(spec.n, spec.vocab_size, spec.alpha_conf);
  const double bound = rank_margin_bound(model, eta);
  const double gap = margin_multiplier * bound / model.a;

  // Keep every reachable response-side value inside [0, ln|V|] so the
  // rollout noise stays representable.
  const double spread = model.epsilon + (model.a + 1.0) * model.delta;
  const double lo = std::max(0.0, (spread - model.b) / model.a);
  const double hi = std::min(ln_v, (ln_v - model.b - spread) / model.a);
  if (!(hi - lo > gap)) {
    throw std::invalid_argument(
        "rank_consistency_rate: no valid gap inside the entropy range");
  }

  long agreements = 0;
  for (long t = 0; t < trials; ++t) {
    auto rng = make_rng(derive_seed(rng_seed, stream::kTrial, t));
    std::uniform_real_distribution<double> place(lo, hi - gap);
    const double v_low = place(rng);
    const double v_high = v_low + gap;
    std::bernoulli_distribution coin(0.5);
    const bool x_is_high = coin(rng);
    const double v_x = x_is_high ? v_high : v_low;
    const double v_y = x_is_high ? v_low : v_high;

    // Adversarial residuals squeeze the response-side gap from both ends:
    // the higher prompt takes every residual downward (dir = -1), the
    // lower prompt upward (dir = +1).
    const auto push = [&](double v, double dir) {
      const double s_prompt =
          v + detail::draw_residual(model.delta, mode, dir, rng);
      const double s_resp =
          model.a * s_prompt + model.b +
          detail::draw_residual(model.epsilon, mode, dir, rng);
      return s_resp + detail::draw_residual(model.delta, mode, dir, rng);
    };
    const double u_x = push(v_x, v_x > v_y ? -1.0 : 1.0);
    const double u_y = push(v_y, v_y > v_x ? -1.0 : 1.0);

    const double est_x = detail::sample_entropy_mean(u_x, ln_v, spec.n, rng);
    const double est_y = detail::sample_entropy_mean(u_y, ln_v, spec.n, rng);
    if ((v_x - v_y) * (est_x - est_y) > 0.0) ++agreements;
  }
  return static_cast<double>(agreements) / static_cast<double>(trials);
}

// ============================================================================
// Propagation fit check
// ============================================================================

struct PropagationFit {
  double pearson_r = 0.0;
  double binned_r_squared = 0.0;
  double binned_slope = 0.0;
};

/**
 * Generates prompts with uniformly spread observable entropy, pushes them
 * through the propagation model with residuals and n-rollout estimation
 * noise, and reports (a) the Pearson correlation of the raw
 * (prompt entropy, estimated response entropy) cloud and (b) the R^2 of
 * a least-squares line through equal-count bin means.
 */
inline PropagationFit propagation_fit_check(const PropagationModel& model,
                                            int num_prompts, int bins,
                                            std::uint64_t rng_seed, int n = 8,
                                            int vocab_size = 4,
                                            double rollout_jitter = 0.1,
                                            ResidualMode mode = ResidualMode::adversarial) {
  model.validate();
  if (num_prompts < 2) {
    throw std::invalid_argument("propagation_fit_check: num_prompts >= 2");
  }
  if (bins < 2 || bins > num_prompts) {
    throw std::invalid_argument(
        "propagation_fit_check: require 2 <= bins <= num_prompts");
  }
  if (n < 1 || vocab_size < 2 || rollout_jitter < 0.0) {
    throw std::invalid_argument("propagation_fit_check: bad noise settings");
  }
  const double ln_v = std::log(static_cast<double>(vocab_size));
  const double spread = model.epsilon + (model.a + 1.0) * model.delta;
  const double lo = std::max(0.0, (spread - model.b) / model.a);
  const double hi = std::min(ln_v, (ln_v - model.b - spread) / model.a);
  if (!(hi > lo)) {
    throw std::invalid_argument(
        "propagation_fit_check: empty feasible entropy range");
  }

  std::vector<std::pair<double, double>> points;
  points.reserve(static_cast<std::size_t>(num_prompts));
  for (int i = 0; i < num_prompts; ++i) {
    auto rng = make_rng(derive_seed(rng_seed, stream::kTrial, i));
    std::uniform_real_distribution<double> place(lo, hi);
    std::uniform_real_distribution<double> sign(0.0, 1.0);
    const double v = place(rng);
    const auto resid = [&](double bound) {
      const double s = sign(rng) < 0.5 ? -1.0 : 1.0;
      return detail::draw_residual(bound, mode, s, rng);
    };
    const double s_prompt = v + resid(model.delta);
    const double u_true =
        model.a * s_prompt + model.b + resid(model.epsilon) +
        resid(model.delta);
    double est = 0.0;
    if (rollout_jitter > 0.0) {
      std::normal_distribution<double> noise(0.0, rollout_jitter);
      for (int k = 0; k < n; ++k) {
        est += std::clamp(u_true + noise(rng), 0.0, ln_v);
      }
      est /= n;
    } else {
      est = u_true;
    }
    points.emplace_back(v, est);
  }

  PropagationFit fit;
  // Pearson r over the raw cloud.
  {
    double mx = 0, my = 0;
    for (const auto& [x, y] : points) {
      mx += x;
      my += y;
    }
    mx /= points.size();
    my /= points.size();
    double sxx = 0, syy = 0, sxy = 0;
    for (const auto& [x, y] : points) {
      sxx += (x - mx) * (x - mx);
      syy += (y - my) * (y - my);
      sxy += (x - mx) * (y - my);
    }
    fit.pearson_r = sxy / std::sqrt(sxx * syy);
  }
  // Equal-count bins by prompt entropy; line fit through bin means.
  {
    std::sort(points.begin(), points.end());
    std::vector<double> bx, by;
    const std::size_t total = points.size();
    for (int bin = 0; bin < bins; ++bin) {
      const std::size_t begin = total * bin / bins;
      const std::size_t end = total * (bin + 1) / bins;
      if (end == begin) continue;
      double sx = 0, sy = 0;
      for (std::size_t i = begin; i < end; ++i) {
        sx += points[i].first;
        sy += points[i].second;
      }
      bx.push_back(sx / (end - begin));
      by.push_back(sy / (end - begin));
    }
    double mx = std::accumulate(bx.begin(), bx.end(), 0.0) / bx.size();
    double my = std::accumulate(by.begin(), by.end(), 0.0) / by.size();
    double sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < bx.size(); ++i) {
      sxx += (bx[i] - mx) * (bx[i] - mx);
      sxy += (bx[i] - mx) * (by[i] - my);
      syy += (by[i] - my) * (by[i] - my);
    }
    fit.binned_slope = sxy / sxx;
    const double intercept = my - fit.binned_slope * mx;
    double ss_res = 0;
    for (std::size_t i = 0; i < bx.size(); ++i) {
      const double pred = intercept + fit.binned_slope * bx[i];
      ss_res += (by[i] - pred) * (by[i] - pred);
    }
    fit.binned_r_squared = syy == 0.0 ? 1.0 : 1.0 - ss_res / syy;
  }
  return fit;
}

}  // namespace edgesel::theory
