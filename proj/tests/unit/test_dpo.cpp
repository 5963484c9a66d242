#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "preflab/dpo.hpp"
#include "preflab/error.hpp"
#include "preflab/numeric.hpp"

using namespace preflab;
using preflab::testing::central_diff;
using preflab::testing::max_rel_error;

namespace {
const Vocab kV({"U", "R", "L", "EOS"}, 3);
constexpr int kLen = 3;
const Prompt kP = make_prompt({Template::Line, Move::Right, Move::Up, 2});
const Prompt kQ = make_prompt({Template::Line, Move::Left, Move::Up, 2});

std::vector<PreferencePair> pairs_for(const Policy& gen, std::size_t n, std::uint64_t seed) {
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(testing::random_pair(gen, i % 2 ? kQ : kP, derive_seed(seed, i)));
  return out;
}

PreferencePair swapped(PreferencePair p) {
  std::swap(p.chosen, p.rejected);
  return p;
}

Policy with_params(const Policy& p, const std::vector<double>& x) {
  Policy c = p;
  std::copy(x.begin(), x.end(), c.mutable_params().begin());
  return c;
}
}  // namespace

TEST_CASE("implicit reward and pair logit") {
  const Policy ref = testing::random_tabular(kV, kLen, kP, 1);
  const TokenSeq y = make_seq(kV, {1, 3});
  CHECK(implicit_reward(ref, ref, kP, y, 0.1) == 0.0);

  // Uniform first step gives R probability 1/4; logit ln 3 on R raises it to 1/2.
  const Policy flat = Policy::tabular(kV, kLen);
  Policy pol = flat;
  const std::vector<double> row{0.0, std::log(3.0), 0.0, 0.0};
  pol.set_context_logits(kP, {}, row);
  CHECK(implicit_reward(pol, flat, kP, y, 0.1) == doctest::Approx(0.1 * std::log(2.0)).epsilon(1e-12));

  const Policy p = testing::random_tabular(kV, kLen, kP, 2);
  for (const auto& pair : pairs_for(p, 10, 3)) {
    if (pair.prompt.id != kP.id) continue;
    const double h = pair_logit(p, ref, pair, 0.3);
    const double oracle = 0.3 * ((testing::brute_logprob(p, kP, pair.chosen) - testing::brute_logprob(ref, kP, pair.chosen)) -
                                 (testing::brute_logprob(p, kP, pair.rejected) - testing::brute_logprob(ref, kP, pair.rejected)));
    CHECK(h == doctest::Approx(oracle).epsilon(1e-10));
    CHECK(pair_logit(p, ref, swapped(pair), 0.3) == doctest::Approx(-h).epsilon(1e-12));
  }
}

TEST_CASE("closed-form losses at h = 0") {
  DpoConfig c;
  c.beta = 0.1;
  CHECK(dpo_pair_loss(0, 0, c) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  c.variant = DpoVariant::Ipo;
  CHECK(dpo_pair_loss(0, 0, c) == doctest::Approx(25.0).epsilon(1e-12));
  c.variant = DpoVariant::Hinge;
  CHECK(dpo_pair_loss(0, 0, c) == 1.0);
  CHECK(dpo_pair_loss(2.0, 0.5, c) == 0.0);
  c.variant = DpoVariant::KtoPair;
  CHECK(dpo_pair_loss(0, 0, c) == doctest::Approx(1.0).epsilon(1e-12));

  DpoConfig ls;
  ls.label_smoothing = 0.2;
  CHECK(dpo_pair_loss(1.0, 0.0, ls) == doctest::Approx(-0.8 * std::log(sigmoid(1.0)) - 0.2 * std::log(sigmoid(-1.0))));
  DpoConfig ipo;
  ipo.variant = DpoVariant::Ipo;
  ipo.beta = 0.5;
  CHECK(dpo_pair_loss(1.0, 0.0, ipo) == 0.0);
  ipo.ipo_target = 3.0;
  CHECK(dpo_pair_loss(1.0, 0.0, ipo) == 4.0);
}

TEST_CASE("variant names and config validation") {
  for (auto v : {DpoVariant::Sigmoid, DpoVariant::Ipo, DpoVariant::Hinge, DpoVariant::KtoPair})
    CHECK(dpo_variant_from_name(dpo_variant_name(v)) == v);
  CHECK_THROWS_AS(dpo_variant_from_name("orpo"), ConfigError);
  DpoConfig c;
  c.beta = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.beta = 0.1;
  c.label_smoothing = 0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("pair weight") {
  const Policy ref = Policy::tabular(kV, kLen);
  const auto pairs = pairs_for(testing::random_tabular(kV, kLen, kP, 5), 6, 6);
  const Policy p = testing::random_tabular(kV, kLen, kP, 7);
  for (const auto& pair : pairs) {
    const double w = pair_weight(p, ref, pair, 0.2);
    CHECK(w == doctest::Approx(sigmoid(-pair_logit(p, ref, pair, 0.2))).epsilon(1e-12));
    CHECK(w + pair_weight(p, ref, swapped(pair), 0.2) == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(sigmoid(-std::log(3.0)) == doctest::Approx(0.25));
  CHECK(pair_weight(ref, ref, pairs[0], 0.2) == 0.5);
}

TEST_CASE("gradient at the reference point") {
  Policy p = Policy::tabular(kV, kLen);
  const auto pairs = pairs_for(testing::random_tabular(kV, kLen, kP, 8), 1, 9);
  materialize_pairs(p, pairs);
  const Policy ref = p;
  DpoConfig c;
  c.beta = 0.1;
  const auto g = dpo_grad(pairs, p, ref, c);
  const auto gw = grad_logprob(p, pairs[0].prompt, pairs[0].chosen);
  const auto gl = grad_logprob(p, pairs[0].prompt, pairs[0].rejected);
  REQUIRE(g.size() == gw.size());
  for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(-0.1 * 0.5 * (gw[i] - gl[i])).epsilon(1e-12));

  const std::vector<PreferencePair> both{pairs[0], swapped(pairs[0])};
  for (double x : dpo_grad(both, p, ref, c)) CHECK(std::abs(x) < 1e-15);
}

TEST_CASE("analytic gradients match finite differences for every variant") {
  const Policy gen = testing::random_tabular(kV, kLen, kP, 10);
  for (int trial = 0; trial < 4; ++trial) {
    const auto pairs = pairs_for(gen, 6, 100 + trial);
    std::vector<Policy> policies;
    Policy tab = Policy::tabular(kV, kLen);
    tab.materialize_all(kP);
    tab.materialize_all(kQ);
    {
      Rng rng(trial);
      std::normal_distribution<double> n(0, 0.7);
      for (double& w : tab.mutable_params()) w = n(rng);
    }
    policies.push_back(tab);
    policies.push_back(Policy::neural(kV, kLen, {2, 5}, 40 + trial, 0.5));
    for (const Policy& pol : policies) {
      const Policy ref = pol.kind() == PolicyKind::Tabular ? testing::random_tabular(kV, kLen, kP, 50 + trial, 0.5)
                                                           : Policy::neural(kV, kLen, {2, 5}, 60 + trial, 0.5);
      for (auto v : {DpoVariant::Sigmoid, DpoVariant::Ipo, DpoVariant::Hinge, DpoVariant::KtoPair}) {
        DpoConfig c;
        c.beta = 0.5;
        c.variant = v;
        if (v == DpoVariant::Sigmoid) c.label_smoothing = 0.1;
        if (v == DpoVariant::KtoPair) c.kto_reference = 0.05;
        const auto g = dpo_grad(pairs, pol, ref, c);
        const std::vector<double> x0(pol.params().begin(), pol.params().end());
        const auto fd = central_diff([&](const std::vector<double>& x) { return dpo_loss(pairs, with_params(pol, x), ref, c).loss; }, x0);
        INFO("variant " << dpo_variant_name(v) << " trial " << trial);
        CHECK(max_rel_error(g, fd) < 1e-4);
      }
    }
  }
}

TEST_CASE("a small step along the negative gradient lowers the loss") {
  Policy p = testing::random_tabular(kV, kLen, kP, 11);
  const Policy ref = testing::random_tabular(kV, kLen, kP, 12);
  const auto pairs = pairs_for(testing::random_tabular(kV, kLen, kP, 13), 8, 14);
  materialize_pairs(p, pairs);
  for (auto v : {DpoVariant::Sigmoid, DpoVariant::Ipo, DpoVariant::KtoPair}) {
    DpoConfig c;
    c.variant = v;
    c.beta = 0.5;
    const double before = dpo_loss(pairs, p, ref, c).loss;
    const auto g = dpo_grad(pairs, p, ref, c);
    Policy q = p;
    for (std::size_t i = 0; i < g.size(); ++i) q.mutable_params()[i] -= 1e-3 * g[i];
    CHECK(dpo_loss(pairs, q, ref, c).loss < before);
  }
}

TEST_CASE("IPO drives the pair logit to 1/(2 beta)") {
  const Policy ref = Policy::tabular(kV, kLen);
  PrefDataset ds;
  ds.pairs = pairs_for(testing::random_tabular(kV, kLen, kP, 15), 1, 16);
  for (double beta : {0.5, 0.25}) {
    DpoConfig c;
    c.variant = DpoVariant::Ipo;
    c.beta = beta;
    DpoTrainConfig t;
    t.epochs = 3000;
    t.batch_size = 1;
    t.optimizer = {OptimizerKind::Sgd, 1.0};
    const auto res = train_dpo(ref, ref, ds, ds, c, t);
    CHECK(std::abs(pair_logit(res.final_policy, ref, ds.pairs[0], beta) - 1.0 / (2.0 * beta)) < 1e-3);
  }
}

TEST_CASE("pair logit does not depend on tabular row order") {
  Policy p = testing::random_tabular(kV, kLen, kP, 17);
  const Policy ref = testing::random_tabular(kV, kLen, kP, 18);
  const auto pairs = pairs_for(p, 6, 19);
  materialize_pairs(p, pairs);
  std::vector<std::size_t> perm(p.tabular_model()->num_rows());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), Rng(20));
  Policy q = p;
  *q.tabular_model() = p.tabular_model()->permuted(perm);
  for (const auto& pair : pairs)
    CHECK(pair_logit(q, ref, pair, 0.1) == doctest::Approx(pair_logit(p, ref, pair, 0.1)).epsilon(1e-12));
}

TEST_CASE("training guards and swap symmetry at the start") {
  const Policy ref = Policy::tabular(kV, kLen);
  PrefDataset ds;
  ds.pairs = pairs_for(testing::random_tabular(kV, kLen, kP, 21), 6, 22);
  PrefDataset sw;
  for (const auto& p : ds.pairs) sw.pairs.push_back(swapped(p));
  DpoConfig c;
  DpoTrainConfig t;
  t.optimizer.kind = OptimizerKind::Adam;
  CHECK_THROWS_AS(train_dpo(ref, ref, ds, ds, c, t), ConfigError);
  t.optimizer = {OptimizerKind::Sgd, 0.5};
  CHECK_THROWS_AS(train_dpo(ref, ref, PrefDataset{}, ds, c, t), EmptyDatasetError);
  CHECK_THROWS_AS(dpo_loss({}, ref, ref, c), EmptyDatasetError);

  // One SGD step from the reference: to first order in the step size the
  // swapped dataset moves each pair's logit by the opposite amount.
  t.epochs = 1;
  t.batch_size = 0;
  const auto a = train_dpo(ref, ref, ds, ds, c, t);
  const auto b = train_dpo(ref, ref, sw, sw, c, t);
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const double ha = pair_logit(a.final_policy, ref, ds.pairs[i], c.beta);
    const double hb = pair_logit(b.final_policy, ref, ds.pairs[i], c.beta);
    CHECK(ha * hb < 0.0);
    CHECK(ha == doctest::Approx(-hb).epsilon(1e-2));
  }
  CHECK(a.log.back().val_accuracy.has_value());
}
