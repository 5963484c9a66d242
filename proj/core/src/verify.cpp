#include "preflab/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "preflab/dpo.hpp"
#include "preflab/error.hpp"
#include "preflab/numeric.hpp"
#include "preflab/optim.hpp"
#include "preflab/oracle.hpp"
#include "preflab/random.hpp"
#include "preflab/reward_model.hpp"
#include "preflab/rlhf.hpp"

namespace preflab {

std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> x, double h) {
  std::vector<double> xp(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("relative_error: size mismatch");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double scale = std::max(l2_norm(a), l2_norm(b));
  return scale == 0.0 ? 0.0 : l2_norm(d) / scale;
}

namespace {

Prompt verify_prompt(std::uint64_t seed, int max_moves) { return make_prompt(gen_prompt(seed, max_moves)); }

Policy random_tabular(const Vocab& v, int L, const Prompt& p, Rng& rng, double std = 1.0) {
  Policy pol = Policy::tabular(v, L);
  pol.materialize_all(p);
  std::normal_distribution<double> n(0.0, std);
  for (double& x : pol.mutable_params()) x = n(rng);
  return pol;
}

PreferencePair random_pair(const Policy& gen, const Prompt& p, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const TokenSeq a = sample(gen, p, 1.0, rng());
    const TokenSeq b = sample(gen, p, 1.0, rng());
    if (a == b) continue;
    PreferencePair pair;
    pair.prompt = p;
    pair.chosen = a;
    pair.rejected = b;
    pair.degree = kAllDegrees[static_cast<std::size_t>(rng() % 4)];
    return pair;
  }
  throw NumericalError("could not sample two distinct completions");
}

template <typename ParamsOf>
double fd_check(Policy policy, const ParamsOf& objective, std::span<const double> analytic) {
  const std::vector<double> x0(policy.params().begin(), policy.params().end());
  auto f = [&](std::span<const double> x) {
    std::copy(x.begin(), x.end(), policy.mutable_params().begin());
    return objective(policy);
  };
  const auto numeric = finite_difference(f, x0);
  return relative_error(analytic, numeric);
}

CheckResult abs_check(std::string name, double measured, double expected, double tol) {
  CheckResult c{std::move(name), measured, expected, tol, "abs", false, {}};
  c.passed = std::isfinite(measured) && std::abs(measured - expected) <= tol;
  return c;
}

CheckResult below_check(std::string name, double measured, double bound, std::string detail = {}) {
  CheckResult c{std::move(name), measured, bound, 0.0, "below", false, std::move(detail)};
  c.passed = std::isfinite(measured) && measured < bound;
  return c;
}

}  // namespace

std::vector<CheckResult> run_verification(const VerifyOptions& opts,
                                          const std::function<void(const CheckResult&)>& on_check) {
  std::vector<CheckResult> out;
  auto emit = [&](CheckResult c) {
    if (on_check) on_check(c);
    out.push_back(std::move(c));
  };
  Rng rng(derive_seed(opts.seed, 0x766572ULL));
  const Vocab v6 = Vocab::motion(true);
  const Vocab v5 = Vocab::motion(false);

  // Closed forms at policy = reference.
  {
    const Prompt p = verify_prompt(derive_seed(opts.seed, 1), 4);
    const Policy ref = Policy::neural(v6, 4, {3, 8}, derive_seed(opts.seed, 2), 0.3);
    const std::vector<PreferencePair> batch{random_pair(ref, p, rng)};
    DpoConfig cfg;
    cfg.beta = 0.1;
    cfg.variant = DpoVariant::Sigmoid;
    emit(abs_check("closed-form sigmoid loss at init", dpo_loss(batch, ref, ref, cfg).loss, std::log(2.0), 1e-9));
    cfg.variant = DpoVariant::Ipo;
    cfg.ipo_target = opts.ipo_target;
    emit(abs_check("closed-form ipo loss at init (beta 0.1)", dpo_loss(batch, ref, ref, cfg).loss, 25.0, 1e-9));
    cfg.ipo_target.reset();
    cfg.variant = DpoVariant::Hinge;
    emit(abs_check("closed-form hinge loss at init", dpo_loss(batch, ref, ref, cfg).loss, 1.0, 1e-9));
    emit(abs_check("pair weight at init", pair_weight(ref, ref, batch[0], 0.1), 0.5, 1e-9));
  }

  // Gradient checks.
  {
    double worst_lp = 0.0;
    for (std::size_t k = 0; k < opts.gradient_configs; ++k) {
      const Prompt p = verify_prompt(derive_seed(opts.seed, 10, k), 4);
      Policy pol = k % 2 == 0 ? random_tabular(v5, 3, p, rng)
                              : Policy::neural(v6, 4, {2, 6}, derive_seed(opts.seed, 11, k), 0.5);
      const TokenSeq y = sample(pol, p, 1.0, rng());
      const auto g = grad_logprob(pol, p, y);
      worst_lp = std::max(worst_lp, fd_check(pol, [&](const Policy& q) { return logprob(q, p, y); }, g));
    }
    emit(below_check("logprob gradient vs finite differences", worst_lp, 1e-4, "max relative error"));

    double worst_rm = 0.0;
    for (std::size_t k = 0; k < opts.gradient_configs; ++k) {
      const Prompt p = verify_prompt(derive_seed(opts.seed, 20, k), 4);
      const Policy gen = Policy::neural(v6, 4, {2, 6}, derive_seed(opts.seed, 21, k), 1.0);
      std::vector<PreferencePair> pairs;
      for (int i = 0; i < 4; ++i) pairs.push_back(random_pair(gen, p, rng));
      RewardModel rm = k % 2 == 0 ? RewardModel::linear(v6, 4, FeatureMap::Handcrafted)
                                  : RewardModel::tiny_neural(v6, 4, FeatureMap::Handcrafted, 5,
                                                             derive_seed(opts.seed, 22, k), 0.5);
      std::normal_distribution<double> n(0.0, 0.5);
      for (double& x : rm.mutable_params()) x = n(rng);
      const MarginTable margins;
      const auto g = reward_loss_grad(rm, pairs, &margins);
      const std::vector<double> x0(rm.params().begin(), rm.params().end());
      auto f = [&](std::span<const double> x) {
        std::copy(x.begin(), x.end(), rm.mutable_params().begin());
        return reward_loss(rm, pairs, &margins);
      };
      const auto numeric = finite_difference(f, x0);
      std::copy(x0.begin(), x0.end(), rm.mutable_params().begin());
      worst_rm = std::max(worst_rm, relative_error(g, numeric));
    }
    emit(below_check("reward loss gradient vs finite differences", worst_rm, 1e-4, "max relative error"));

    for (DpoVariant variant : {DpoVariant::Sigmoid, DpoVariant::Ipo, DpoVariant::Hinge, DpoVariant::KtoPair}) {
      double worst = 0.0;
      for (std::size_t k = 0; k < opts.gradient_configs; ++k) {
        const Prompt p = verify_prompt(derive_seed(opts.seed, 30, k), 3);
        const Policy ref = random_tabular(v5, 3, p, rng, 0.5);
        Policy pol = k % 2 == 0 ? random_tabular(v5, 3, p, rng)
                                : Policy::neural(v5, 3, {2, 6}, derive_seed(opts.seed, 31, k), 0.5);
        std::vector<PreferencePair> batch;
        for (int i = 0; i < 3; ++i) batch.push_back(random_pair(ref, p, rng));
        DpoConfig cfg;
        cfg.variant = variant;
        cfg.beta = 0.5;
        cfg.label_smoothing = variant == DpoVariant::Sigmoid ? 0.1 : 0.0;
        cfg.kto_reference = 0.05;
        const auto g = dpo_grad(batch, pol, ref, cfg);
        worst = std::max(worst, fd_check(pol, [&](const Policy& q) { return dpo_loss(batch, q, ref, cfg).loss; }, g));
      }
      emit(below_check(std::string("dpo ") + dpo_variant_name(variant) + " gradient vs finite differences", worst,
                       1e-4, "max relative error"));
    }
  }

  // KL identities on enumerable tables.
  {
    double worst_ce = 0.0, worst_tok = 0.0, worst_norm = 0.0;
    for (int k = 0; k < 5; ++k) {
      const Prompt prompt = verify_prompt(derive_seed(opts.seed, 40, static_cast<std::uint64_t>(k)), 3);
      const Policy p = random_tabular(v5, 3, prompt, rng);
      const Policy q = random_tabular(v5, 3, prompt, rng);
      const auto tp = policy_table(p, prompt);
      const auto tq = policy_table(q, prompt);
      const double kl = exact_kl(tp, tq);
      worst_ce = std::max(worst_ce, std::abs(kl - (exact_cross_entropy(tp, tq) - exact_entropy(tp))));
      worst_tok = std::max(worst_tok, std::abs(kl - per_token_kl(p, q, prompt)));
      const auto table = optimal_policy(q, [&](const Prompt& x, const TokenSeq& y) { return truth_score(v5, x, y); },
                                        0.05, prompt);
      double mass = 0.0;
      for (std::size_t i = 0; i < table.support.size(); ++i) mass += std::exp(table.log_optimal[i]);
      worst_norm = std::max(worst_norm, std::abs(mass - 1.0));
    }
    emit(abs_check("sequence KL equals cross-entropy minus entropy", worst_ce, 0.0, 1e-9));
    emit(abs_check("per-token KL sums to sequence KL", worst_tok, 0.0, 1e-6));
    emit(abs_check("Gibbs policy normalization", worst_norm, 0.0, 1e-9));
  }

  // RLHF recovers the Gibbs policy.
  {
    const Prompt prompt = make_prompt({Template::Line, Move::Right, Move::Left, 2});
    const Policy ref = Policy::tabular(v5, 2);
    const RewardFn reward = [&](const Prompt& x, const TokenSeq& y) { return truth_score(v5, x, y); };
    RlhfConfig cfg;
    cfg.kl_coeff = 0.05;
    cfg.reward_scaling = RewardScaling::None;
    cfg.steps = opts.rlhf_steps;
    cfg.policy_optimizer = {OptimizerKind::Adam, 0.05};
    cfg.value_optimizer = {OptimizerKind::Adam, 0.05};
    cfg.seed = derive_seed(opts.seed, 50);
    RlhfTrainer trainer(ref, ref, reward, cfg);
    const std::vector<Prompt> pool{prompt};
    trainer.train(pool);
    const auto target = optimal_policy(ref, reward, cfg.kl_coeff, prompt);
    const double kl = exact_kl(policy_table(trainer.policy(), prompt), target.optimal());
    emit(below_check("RLHF recovers the Gibbs-optimal policy (KL to optimum)", kl, 1e-2,
                     std::to_string(opts.rlhf_steps) + " steps"));
  }
  return out;
}

nlohmann::ordered_json to_json(const CheckResult& c) {
  nlohmann::ordered_json j;
  j["name"] = c.name;
  j["passed"] = c.passed;
  j["measured"] = c.measured;
  j["expected"] = c.expected;
  j["relation"] = c.relation;
  j["tolerance"] = c.tolerance;
  if (!c.detail.empty()) j["detail"] = c.detail;
  return j;
}

std::string format_check(const CheckResult& c) {
  char buf[512];
  if (c.relation == "below")
    std::snprintf(buf, sizeof buf, "[%s] %s: measured %.6g, required < %.6g", c.passed ? "PASS" : "FAIL",
                  c.name.c_str(), c.measured, c.expected);
  else
    std::snprintf(buf, sizeof buf, "[%s] %s: measured %.12g, expected %.12g +- %.1g", c.passed ? "PASS" : "FAIL",
                  c.name.c_str(), c.measured, c.expected, c.tolerance);
  std::string s = buf;
  if (!c.detail.empty()) s += " (" + c.detail + ")";
  return s;
}

}  // namespace preflab
