#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "preflab/error.hpp"
#include "preflab/numeric.hpp"
#include "preflab/reward_model.hpp"

using namespace preflab;
using preflab::testing::central_diff;
using preflab::testing::max_rel_error;

namespace {
const Vocab kV = Vocab::motion();
constexpr int kLen = 8;

std::vector<PreferencePair> sampled_pairs(std::size_t n, std::uint64_t seed) {
  const Policy gen = Policy::tabular(kV, kLen);
  const auto prompts = gen_unique_prompts(seed, 8, 5);
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const Degree d = kAllDegrees[i % 4];
    out.push_back(testing::random_pair(gen, prompts[i % prompts.size()], derive_seed(seed, i), d));
  }
  return out;
}

/// Chosen is always the ideal path; rejected a random distinct sample.
PrefDataset ideal_vs_random(std::size_t n, std::uint64_t seed) {
  const Policy gen = Policy::tabular(kV, kLen);
  const auto prompts = gen_unique_prompts(seed, n, 5);
  PrefDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    PreferencePair p;
    p.prompt = prompts[i];
    p.chosen = ideal_sequence(kV, prompts[i].spec, kLen);
    for (std::uint64_t k = 0;; ++k) {
      p.rejected = sample(gen, prompts[i], 1.0, derive_seed(seed, i, k));
      if (p.rejected != p.chosen) break;
    }
    p.degree = Degree::MuchBetter;
    ds.pairs.push_back(p);
  }
  return ds;
}

double set_random(RewardModel& m, std::uint64_t seed, double std = 0.3) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, std);
  for (double& w : m.mutable_params()) w = n(rng);
  return 0.0;
}
}  // namespace

TEST_CASE("zero linear model scores zero and matches a dot product") {
  RewardModel m = RewardModel::linear(kV, kLen);
  const Prompt p = make_prompt({Template::Square, Move::Up, Move::Left, 4});
  const TokenSeq y = parse_seq(kV, "U L D EOS");
  CHECK(m.raw(p, y) == 0.0);
  CHECK(m.feature_dim() == kHandcraftedFeatureDim);
  set_random(m, 3);
  const auto phi = handcrafted_features(kV, p, y, kLen);
  REQUIRE(phi.size() == m.params().size());
  long double dot = 0;
  for (std::size_t i = 0; i < phi.size(); ++i) dot += static_cast<long double>(phi[i]) * m.params()[i];
  CHECK(m.raw(p, y) == doctest::Approx(static_cast<double>(dot)).epsilon(1e-12));
  CHECK(sequence_features(kV, y, kLen).size() == kSequenceFeatureDim);
}

TEST_CASE("Bradley-Terry probability") {
  CHECK(bt_prob(1.3, 1.3) == 0.5);
  CHECK(bt_prob(std::log(3.0), 0.0) == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(bt_prob(-2.0, 0.0) == doctest::Approx(0.1192029).epsilon(1e-6));
  for (double c : {-5.0, 0.0, 17.0}) CHECK(bt_prob(0.4 + c, -0.9 + c) == doctest::Approx(bt_prob(0.4, -0.9)).epsilon(1e-12));
}

TEST_CASE("pair loss: ln 2 at a zero model, margin shifts the logit") {
  const RewardModel m = RewardModel::linear(kV, kLen);
  const auto pairs = sampled_pairs(8, 1);
  CHECK(reward_loss(m, pairs, nullptr) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  const MarginTable margins;
  CHECK(reward_pair_loss(m, pairs[0], 3.0) == doctest::Approx(3.0485874).epsilon(1e-6));
  CHECK(margins.margin(Degree::MuchBetter) == 3.0);
  CHECK(margins.margin(Degree::NegligiblyBetter) == 0.0);
  CHECK_THROWS_AS(margins.margin(Degree::Skipped), RejectedInputError);
  CHECK_THROWS_AS((MarginTable{1.0, 2.0, 0.5, 0.0}.validate()), ConfigError);

  RewardModel r = RewardModel::linear(kV, kLen);
  set_random(r, 9);
  for (const auto& p : pairs) {
    const double d = r.raw(p.prompt, p.chosen) - r.raw(p.prompt, p.rejected);
    CHECK(reward_pair_loss(r, p, 1.5) == doctest::Approx(-log_sigmoid(d - 1.5)).epsilon(1e-12));
    CHECK(reward_pair_loss(r, p, 1.5) > reward_pair_loss(r, p, 0.0));
  }
}

TEST_CASE("reward loss gradient matches finite differences") {
  const auto pairs = sampled_pairs(12, 4);
  const MarginTable margins;
  std::vector<RewardModel> models{RewardModel::linear(kV, kLen),
                                  RewardModel::linear(kV, kLen, FeatureMap::Expressive),
                                  RewardModel::tiny_neural(kV, kLen, FeatureMap::Handcrafted, 6, 5, 0.3)};
  set_random(models[0], 11);
  set_random(models[1], 12, 0.05);
  for (auto& m : models) {
    for (const MarginTable* mt : {static_cast<const MarginTable*>(nullptr), &margins}) {
      const auto g = reward_loss_grad(m, pairs, mt);
      const std::vector<double> x0(m.params().begin(), m.params().end());
      auto f = [&](const std::vector<double>& x) {
        RewardModel c = m;
        std::copy(x.begin(), x.end(), c.mutable_params().begin());
        return reward_loss(c, pairs, mt);
      };
      CHECK(max_rel_error(g, central_diff(f, x0)) < 1e-5);
    }
  }
}

TEST_CASE("training fits separable preferences") {
  const PrefDataset train = ideal_vs_random(40, 21);
  RewardTrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 8;
  cfg.use_margins = false;
  cfg.optimizer = {OptimizerKind::Momentum, 0.1};
  const auto res = train_reward(RewardModel::linear(kV, kLen, FeatureMap::Expressive), train, train, cfg);
  REQUIRE(res.log.epochs.size() == 200);
  CHECK(res.log.epochs.back().train_loss < 0.05);
  CHECK(reward_accuracy(res.final_model, train.pairs) == 1.0);
  CHECK(res.final_model.normalization().enabled);
  CHECK(res.best_epoch >= 1);
  const auto& p = train.pairs[0];
  const auto& n = res.final_model.normalization();
  CHECK(res.final_model(p.prompt, p.chosen) ==
        doctest::Approx((res.final_model.raw(p.prompt, p.chosen) - n.mean) / n.std).epsilon(1e-12));
  CHECK(reward(res.final_model, p.prompt, p.chosen) == res.final_model(p.prompt, p.chosen));
}

TEST_CASE("training is deterministic for a seed") {
  const PrefDataset train = ideal_vs_random(16, 2);
  RewardTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 4;
  cfg.seed = 17;
  const auto a = train_reward(RewardModel::linear(kV, kLen), train, train, cfg);
  const auto b = train_reward(RewardModel::linear(kV, kLen), train, train, cfg);
  CHECK(std::equal(a.final_model.params().begin(), a.final_model.params().end(), b.final_model.params().begin()));
  CHECK_THROWS_AS(train_reward(RewardModel::linear(kV, kLen), PrefDataset{}, train, cfg), EmptyDatasetError);
}

TEST_CASE("score scaling") {
  const std::vector<double> a{1, 2, 3};
  const auto w = scale_scores(a, ScaleMode::Whiten);
  CHECK_FALSE(w.degenerate);
  CHECK(w.values[0] == doctest::Approx(-1.2247449).epsilon(1e-7));
  CHECK(w.values[1] == doctest::Approx(0.0));
  CHECK(w.values[2] == doctest::Approx(1.2247449).epsilon(1e-7));

  const std::vector<double> c{5, 5, 5};
  const auto dw = scale_scores(c, ScaleMode::Whiten);
  CHECK(dw.degenerate);
  CHECK(dw.values == std::vector<double>{0, 0, 0});
  const auto ds = scale_scores(c, ScaleMode::ScaleOnly);
  CHECK(ds.degenerate);
  CHECK(ds.values == c);

  const std::vector<double> e{2, 6};
  const auto s = scale_scores(e, ScaleMode::ScaleOnly);
  CHECK(s.values[0] == doctest::Approx(1.0));
  CHECK(s.values[1] == doctest::Approx(3.0));

  const std::vector<double> one{4.0};
  CHECK_THROWS_AS(scale_scores(one, ScaleMode::Whiten), ConfigError);
}

TEST_CASE("overfit report") {
  RewardTrainLog log;
  const double train[] = {0.5, 0.3, 0.1, 0.05, 0.02};
  const double val[] = {0.6, 0.5, 0.4, 0.45, 0.6};
  for (int i = 0; i < 5; ++i) log.epochs.push_back({i + 1, train[i], val[i], 0.5});
  const auto r = overfit_report(log);
  CHECK(r.turning_point == 3);
  CHECK(r.min_val_loss == doctest::Approx(0.4));
  CHECK(r.generalization_gap == doctest::Approx(0.58));
  CHECK(r.overfit);

  log.epochs.back().train_loss = 0.2;
  CHECK_FALSE(overfit_report(log).overfit);
  log.epochs.back() = {5, 0.02, 0.42, 0.5};
  CHECK_FALSE(overfit_report(log).overfit);

  RewardTrainLog shortlog;
  shortlog.epochs.push_back({1, 0.1, 0.1, 1.0});
  CHECK_THROWS_AS(overfit_report(shortlog), ConfigError);
}

TEST_CASE("reward checkpoint round trip") {
  const auto dir = testing::temp_dir("reward-ckpt");
  RewardModel m = RewardModel::tiny_neural(kV, kLen, FeatureMap::Expressive, 4, 8);
  m.set_normalization({true, 0.25, 2.0});
  save_reward_model(m, dir / "r.json");
  const RewardModel back = load_reward_model(dir / "r.json");
  CHECK(back.arch() == RewardArch::TinyNeural);
  CHECK(back.feature_map() == FeatureMap::Expressive);
  CHECK(back.hidden() == 4);
  CHECK(std::equal(m.params().begin(), m.params().end(), back.params().begin(), back.params().end()));
  const Prompt p = make_prompt({Template::Zigzag, Move::Right, Move::Down, 4});
  const TokenSeq y = parse_seq(kV, "R D R D");
  CHECK(back(p, y) == m(p, y));

  auto j = to_json_value(m);
  j["format_version"] = 7;
  CHECK_THROWS_AS(reward_model_from_json(j), MigrationError);
}
