#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "preflab/error.hpp"
#include "preflab/eval.hpp"
#include "preflab/reward_model.hpp"

using namespace preflab;

namespace {
const Vocab kV = Vocab::motion();
constexpr int kLen = 8;

ScoreFn judge() {
  return [](const Prompt& x, const TokenSeq& y) { return truth_score(kV, x, y); };
}

/// Tabular policy that spells each prompt's ideal path with near certainty.
Policy ideal_policy(std::span<const Prompt> prompts) {
  Policy p = Policy::tabular(kV, kLen);
  for (const auto& x : prompts) {
    const TokenSeq y = ideal_sequence(kV, x.spec, kLen);
    for (std::size_t t = 0; t < y.size(); ++t) {
      std::vector<double> row(static_cast<std::size_t>(kV.size()), 0.0);
      row[static_cast<std::size_t>(y.tokens[t])] = 40.0;
      p.set_context_logits(x, std::span<const int>(y.tokens.data(), t), row);
    }
  }
  return p;
}

FeatureMatrix gaussian(std::size_t n, std::size_t d, std::uint64_t seed, double scale = 1.0, double shift = 0.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMatrix out(n, std::vector<double>(d));
  for (auto& row : out)
    for (std::size_t j = 0; j < d; ++j) row[j] = shift + scale * (j + 1) * g(rng) * (j % 2 ? 0.5 : 1.0);
  return out;
}
}  // namespace

TEST_CASE("Frechet distance") {
  const auto a = gaussian(200, 3, 1);
  CHECK(std::abs(frechet_distance(a, a)) < 1e-8);

  auto b = a;
  for (auto& row : b) {
    row[0] += 1.0;
    row[2] -= 2.0;
  }
  CHECK(frechet_distance(a, b) == doctest::Approx(5.0).epsilon(1e-8));

  const auto c = gaussian(150, 3, 2, 1.7, 0.3);
  CHECK(frechet_distance(a, c) == doctest::Approx(testing::brute_frechet(a, c)).epsilon(1e-6));
  CHECK(frechet_distance(a, c) == doctest::Approx(frechet_distance(c, a)).epsilon(1e-9));

  const auto small = gaussian(3, 3, 3);
  CHECK_THROWS_AS(frechet_distance(small, a), ConfigError);
  CHECK_THROWS_AS(frechet_distance(a, gaussian(10, 2, 4)), ConfigError);
}

TEST_CASE("diversity") {
  const FeatureMatrix two{{0, 0}, {3, 4}};
  CHECK(diversity(two) == doctest::Approx(5.0));
  const FeatureMatrix three{{0, 0}, {3, 4}, {0, 4}};
  CHECK(diversity(three) == doctest::Approx(4.0));
  CHECK(mean_pairwise_distance(three) == doctest::Approx(4.0));
  const FeatureMatrix same{{1, 2}, {1, 2}, {1, 2}};
  CHECK(diversity(same) == 0.0);
  CHECK_THROWS_AS(diversity(FeatureMatrix{{1.0}}), ConfigError);

  const auto many = gaussian(400, 4, 5);
  const double full = diversity(many);
  const double sub = diversity(many, 4000, 9);
  CHECK(std::abs(sub - full) / full < 0.05);
  CHECK(diversity(many, 4000, 9) == sub);

  const std::vector<TokenSeq> seqs{parse_seq(kV, "U U EOS"), parse_seq(kV, "U U EOS")};
  CHECK(diversity(kV, seqs, kLen) == 0.0);
}

TEST_CASE("multimodality") {
  const auto prompts = gen_unique_prompts(3, 6);
  const Policy p = testing::random_tabular(kV, 4, prompts[0], 6, 1.5);
  CHECK(multimodality(p, prompts, 6, 1.0, 1, true) == 0.0);
  const Policy u = Policy::tabular(kV, kLen);
  double prev = -1.0;
  const std::vector<Prompt> one{prompts[0]};
  for (double t : {0.3, 1.0, 3.0}) {
    const double m = multimodality(p, one, 60, t, 2);
    CHECK(m > prev);
    prev = m;
  }
  CHECK(multimodality(u, prompts, 10, 1.0, 3) > 0.0);
  CHECK_THROWS_AS(multimodality(u, prompts, 1, 1.0, 3), ConfigError);
}

TEST_CASE("win rate") {
  const auto prompts = gen_unique_prompts(4, 12);
  const Policy best = ideal_policy(prompts);
  const Policy uniform = Policy::tabular(kV, kLen);
  const auto w = win_rate(best, uniform, prompts, judge(), 1.0, 200, kDefaultTieBand, 7);
  CHECK(w.n == 200);
  CHECK(w.win > 0.9);
  CHECK(w.win + w.tie + w.loss == doctest::Approx(1.0).epsilon(1e-12));

  const auto r = win_rate(uniform, best, prompts, judge(), 1.0, 200, kDefaultTieBand, 7);
  CHECK(r.win == doctest::Approx(w.loss).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(w.win).epsilon(1e-12));
  CHECK(r.tie == doctest::Approx(w.tie).epsilon(1e-12));

  const auto self = win_rate(best, best, prompts, judge(), 1.0, 50, kDefaultTieBand, 7);
  CHECK(self.tie == 1.0);
  CHECK_THROWS_AS(win_rate(best, uniform, prompts, judge(), 0.0, 10), ConfigError);
  CHECK_THROWS_AS(win_rate(best, uniform, prompts, judge(), 1.0, 0), ConfigError);
}

TEST_CASE("retrieval precision") {
  const auto prompts = gen_unique_prompts(5, 40);
  const std::vector<std::size_t> ks{1, 2, 5};
  const auto perfect = retrieval_precision(ideal_policy(prompts), prompts, judge(), ks, 16, 3);
  CHECK(perfect.n == 40);
  CHECK(perfect.precision[0] == 1.0);

  const ScoreFn flat = [](const Prompt&, const TokenSeq&) { return 0.0; };
  std::vector<Prompt> many;
  for (int r = 0; r < 10; ++r) many.insert(many.end(), prompts.begin(), prompts.end());
  const auto chance = retrieval_precision(Policy::tabular(kV, kLen), many, flat, ks, 10, 4, 1.0, prompts);
  for (std::size_t i = 0; i < ks.size(); ++i) {
    const double q = static_cast<double>(ks[i]) / 10.0;
    CHECK(std::abs(chance.precision[i] - q) <= 4 * std::sqrt(q * (1 - q) / 400.0));
    if (i) CHECK(chance.precision[i] >= chance.precision[i - 1]);
  }
  CHECK_THROWS_AS(retrieval_precision(Policy::tabular(kV, kLen), prompts, judge(), ks, 4, 1), ConfigError);
}

TEST_CASE("ranking agreement") {
  const auto prompts = gen_unique_prompts(7, 10);
  const Policy ref = Policy::tabular(kV, kLen);
  std::vector<PreferencePair> pairs;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    PreferencePair p;
    p.prompt = prompts[i];
    p.chosen = ideal_sequence(kV, prompts[i].spec, kLen);
    p.rejected = parse_seq(kV, "STAY EOS");
    pairs.push_back(p);
  }
  CHECK(ranking_agreement(ref, ref, pairs, judge()).agreement == 0.5);
  const auto good = ranking_agreement(ideal_policy(prompts), ref, pairs, judge());
  CHECK(good.n == pairs.size());
  CHECK(good.agreement == 1.0);
  for (auto& p : pairs) std::swap(p.chosen, p.rejected);
  CHECK(ranking_agreement(ideal_policy(prompts), ref, pairs, judge()).agreement == 1.0);
  CHECK_THROWS_AS(ranking_agreement(ref, ref, pairs, judge(), 10.0), EmptyDatasetError);
}

TEST_CASE("full report is deterministic for a seed") {
  const auto prompts = gen_unique_prompts(8, 20);
  const Policy p = ideal_policy(prompts);
  const Policy u = Policy::tabular(kV, kLen);
  EvalConfig cfg;
  cfg.comparisons = 60;
  cfg.pool_size = 8;
  cfg.seed = 3;
  const auto a = evaluate(p, u, prompts, judge(), cfg);
  const auto b = evaluate(p, u, prompts, judge(), cfg);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.mean_score > 0.99);
  CHECK(a.frechet >= 0.0);
  CHECK(a.samples == 60);
}
