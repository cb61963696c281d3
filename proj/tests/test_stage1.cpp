#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "edgesel/stage1.hpp"

using namespace edgesel;
using stage1::SaturationClass;

namespace {

grpo::RewardGroup rewards(std::vector<double> r) {
  return grpo::RewardGroup(std::move(r));
}

// Brute-force suffix scan used as the oracle for run lengths.
int reference_run_length(const std::vector<stage1::EpochRecord>& recs) {
  int z = 0;
  for (auto it = recs.rbegin(); it != recs.rend(); ++it) {
    if (!it->zero_variance) break;
    ++z;
  }
  return z;
}

std::vector<PromptId> iota_ids(std::size_t n) {
  std::vector<PromptId> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  return ids;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) {
    path = std::string("/tmp/edgesel_test_") + name + "_" +
           std::to_string(::getpid());
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE("stage1") {

TEST_CASE("epoch records classify saturation by the common reward value") {
  stage1::TraceStore store;
  auto rec = stage1::record_epoch(store, 1, rewards({1.0, 1.0, 1.0}), 0.4);
  CHECK(rec.zero_variance);
  CHECK(rec.saturation_class == SaturationClass::easy);

  rec = stage1::record_epoch(store, 2, rewards({0.0, 0.0}), 0.4);
  CHECK(rec.zero_variance);
  CHECK(rec.saturation_class == SaturationClass::hard);

  rec = stage1::record_epoch(store, 3, rewards({1.0, 0.0}), 0.4);
  CHECK_FALSE(rec.zero_variance);
  CHECK(rec.saturation_class == SaturationClass::mixed);

  // Identical interior rewards carry no gradient either; they bin to the
  // nearer extreme.
  rec = stage1::record_epoch(store, 4, rewards({0.7, 0.7}), 0.4);
  CHECK(rec.zero_variance);
  CHECK(rec.saturation_class == SaturationClass::easy);
  rec = stage1::record_epoch(store, 5, rewards({0.3, 0.3}), 0.4);
  CHECK(rec.saturation_class == SaturationClass::hard);
}

TEST_CASE("zero-variance run length counts the saturated suffix only") {
  stage1::TraceStore store;
  CHECK(stage1::zero_variance_run_length(store, 9) == 0);

  stage1::record_epoch(store, 9, rewards({1.0, 1.0}), 0.1);
  stage1::record_epoch(store, 9, rewards({1.0, 0.0}), 0.1);
  stage1::record_epoch(store, 9, rewards({1.0, 1.0}), 0.1);
  stage1::record_epoch(store, 9, rewards({0.0, 0.0}), 0.1);
  CHECK(stage1::zero_variance_run_length(store, 9) == 2);

  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 100; ++trial) {
    stage1::TraceStore s;
    std::vector<stage1::EpochRecord> recs;
    const int len = static_cast<int>(rng() % 12);
    for (int i = 0; i < len; ++i) {
      const bool zv = coin(rng);
      auto group = zv ? rewards({1.0, 1.0}) : rewards({1.0, 0.0});
      recs.push_back(stage1::record_epoch(s, 5, group, 0.2));
    }
    CHECK(stage1::zero_variance_run_length(s, 5) == reference_run_length(recs));
  }
}

TEST_CASE("reward score decays geometrically with the saturated run") {
  stage1::TraceStore store;
  stage1::ExplorationState state;
  state.p_e_easy = 0.5;
  state.p_e_hard = 0.2;

  CHECK(stage1::reward_score(store, 1, state) == 1.0);

  for (int k = 1; k <= 4; ++k) {
    stage1::record_epoch(store, 1, rewards({1.0, 1.0}), 0.1);
    CHECK(stage1::reward_score(store, 1, state) ==
          doctest::Approx(std::pow(0.5, k)).epsilon(1e-12));
  }

  // The class of the most recent record picks the exploration rate.
  stage1::record_epoch(store, 1, rewards({0.0, 0.0}), 0.1);
  CHECK(stage1::reward_score(store, 1, state) ==
        doctest::Approx(std::pow(0.2, 5)).epsilon(1e-12));

  // A mixed group resets the run.
  stage1::record_epoch(store, 1, rewards({1.0, 0.0}), 0.1);
  CHECK(stage1::reward_score(store, 1, state) == 1.0);
}

TEST_CASE("entropy score is a min-max normalization with a neutral fallback") {
  CHECK(stage1::entropy_score(0.3, 0.1, 0.5) == doctest::Approx(0.5));
  CHECK(stage1::entropy_score(0.1, 0.1, 0.5) == 0.0);
  CHECK(stage1::entropy_score(0.5, 0.1, 0.5) == 1.0);
  CHECK(stage1::entropy_score(0.7, 0.7, 0.7) == 0.5);
  CHECK_THROWS_AS(stage1::entropy_score(0.3, 0.5, 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS(stage1::entropy_score(0.9, 0.1, 0.5),
                  std::invalid_argument);
}

TEST_CASE("selection probability blends the two scores linearly") {
  CHECK(stage1::select_probability(1.0, 0.0, 0.5) == doctest::Approx(0.5));
  CHECK(stage1::select_probability(0.2, 0.8, 0.25) ==
        doctest::Approx(0.25 * 0.2 + 0.75 * 0.8));
  CHECK(stage1::select_probability(0.3, 0.9, 1.0) == doctest::Approx(0.3));
  CHECK(stage1::select_probability(0.3, 0.9, 0.0) == doctest::Approx(0.9));
  CHECK_THROWS_AS(stage1::select_probability(0.5, 0.5, 1.5),
                  std::invalid_argument);
}

TEST_CASE("pool scoring gives unseen prompts the neutral priors") {
  stage1::TraceStore store;
  stage1::ExplorationState state;
  stage1::record_epoch(store, 10, rewards({1.0, 1.0}), 0.2);
  stage1::record_epoch(store, 11, rewards({1.0, 0.0}), 0.8);

  const std::vector<PromptId> batch = {10, 11, 12};
  const auto scores = stage1::score_pool(store, batch, state, 0.5);
  REQUIRE(scores.size() == 3);

  // Seen members are normalized over the seen entropies {0.2, 0.8}.
  CHECK(scores[0].p_rew == doctest::Approx(0.5));  // one saturated epoch
  CHECK(scores[0].p_ent == doctest::Approx(0.0));
  CHECK(scores[1].p_rew == doctest::Approx(1.0));
  CHECK(scores[1].p_ent == doctest::Approx(1.0));
  CHECK(scores[2].p_rew == doctest::Approx(1.0));
  CHECK(scores[2].p_ent == doctest::Approx(0.5));
  CHECK(scores[2].p_select == doctest::Approx(0.75));
}

TEST_CASE("stage 1 target count rounds the oversampled batch up") {
  stage1::Stage1Config cfg;
  cfg.target_batch = 3;
  cfg.oversample_factor = 1.5;
  CHECK(stage1::stage1_target_count(cfg) == 5);
  cfg.oversample_factor = 2.0;
  CHECK(stage1::stage1_target_count(cfg) == 6);
  CHECK(stage1::stage1_raw_batch(cfg) == 6);
  cfg.raw_batch_size = 48;
  CHECK(stage1::stage1_raw_batch(cfg) == 48);
}

TEST_CASE("stage 1 fill is exact-size, duplicate-free, and deterministic") {
  stage1::TraceStore store;
  stage1::ExplorationState state;
  stage1::Stage1Config cfg;
  cfg.target_batch = 32;
  cfg.oversample_factor = 2.0;
  const auto dataset = iota_ids(70);

  const auto a = stage1::stage1_fill(store, dataset, cfg, state, 42);
  const auto b = stage1::stage1_fill(store, dataset, cfg, state, 42);
  const auto c = stage1::stage1_fill(store, dataset, cfg, state, 43);
  CHECK(a.size() == 64);
  CHECK(a == b);
  CHECK(a != c);
  CHECK(std::set<PromptId>(a.begin(), a.end()).size() == a.size());

  CHECK_THROWS_AS(stage1::stage1_fill(store, iota_ids(10), cfg, state, 1),
                  std::invalid_argument);
}

TEST_CASE("stage 1 fails loudly when acceptance collapses") {
  stage1::TraceStore store;
  const auto dataset = iota_ids(50);
  // Every prompt deeply easy-saturated and the exploration rate floored:
  // acceptance probability p_e^z is astronomically small.
  for (PromptId id : dataset) {
    for (int k = 0; k < 10; ++k) {
      stage1::record_epoch(store, id, rewards({1.0, 1.0}), 0.3);
    }
  }
  stage1::ExplorationState state;
  state.p_e_easy = state.p_e_hard = state.p_min = 0.01;
  stage1::Stage1Config cfg;
  cfg.target_batch = 8;
  cfg.oversample_factor = 2.0;
  cfg.lambda = 1.0;  // reward history only, no entropy rescue
  CHECK_THROWS_AS(stage1::stage1_fill(store, dataset, cfg, state, 7),
                  RunError);
}

TEST_CASE("controller steers each class toward the target share") {
  stage1::ExplorationState state;
  state.p_e_easy = 0.5;
  state.p_e_hard = 0.5;
  state.delta_p = 0.02;
  state.target_alpha = 0.25;

  // Easy overshoots (50% > 25%), hard undershoots (0%).
  auto next = stage1::adapt_exploration(state, 16, 0, 32);
  CHECK(next.p_e_easy == doctest::Approx(0.48));
  CHECK(next.p_e_hard == doctest::Approx(0.52));

  // Exactly at target counts as not overshooting.
  next = stage1::adapt_exploration(state, 8, 8, 32);
  CHECK(next.p_e_easy == doctest::Approx(0.52));
  CHECK(next.p_e_hard == doctest::Approx(0.52));
}

TEST_CASE("controller clamps to the configured band") {
  stage1::ExplorationState state;
  state.p_e_easy = 0.011;
  state.p_e_hard = 0.995;
  state.delta_p = 0.02;
  auto next = stage1::adapt_exploration(state, 32, 0, 32);
  CHECK(next.p_e_easy == doctest::Approx(0.01));  // floor
  CHECK(next.p_e_hard == doctest::Approx(1.0));   // ceiling

  CHECK_THROWS_AS(stage1::adapt_exploration(state, 1, 0, 0),
                  std::invalid_argument);
  CHECK_THROWS_AS(stage1::adapt_exploration(state, 20, 20, 32),
                  std::invalid_argument);
}

TEST_CASE("trace stores round-trip through JSONL") {
  stage1::TraceStore store;
  stage1::record_epoch(store, 3, rewards({1.0, 1.0}), 0.25);
  stage1::record_epoch(store, 3, rewards({1.0, 0.0}), 0.5);
  stage1::record_epoch(store, 1, rewards({0.0, 0.0}), 0.75);

  TempFile f("trace");
  store.save_jsonl(f.path);
  const auto loaded = stage1::TraceStore::load_jsonl(f.path);
  CHECK(loaded.prompt_count() == 2);
  REQUIRE(loaded.find(3) != nullptr);
  CHECK(loaded.find(3)->size() == 2);
  CHECK(loaded.latest(3)->saturation_class == SaturationClass::mixed);
  CHECK(loaded.latest(3)->response_entropy == doctest::Approx(0.5));
  CHECK(loaded.latest(1)->saturation_class == SaturationClass::hard);
  CHECK(stage1::zero_variance_run_length(loaded, 1) == 1);

  // Saving twice yields identical bytes (ids are ordered).
  TempFile g("trace2");
  store.save_jsonl(g.path);
  std::ifstream fa(f.path), fb(g.path);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().find("\"id\":1") < sa.str().find("\"id\":3"));
}

TEST_CASE("trace loading reports the offending line") {
  TempFile f("badtrace");
  {
    std::ofstream out(f.path);
    out << R"({"id":1,"records":[]})" << "\n";
    out << "not json\n";
  }
  try {
    stage1::TraceStore::load_jsonl(f.path);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("trace line 2") != std::string::npos);
  }
}

}
