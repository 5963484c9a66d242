#include "preflab/oracle.hpp"

#include <cmath>
#include <limits>
#include <ostream>

#include "preflab/error.hpp"
#include "preflab/numeric.hpp"

namespace preflab {

namespace {

std::string describe(const TokenSeq& seq) {
  std::string out = "[";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(seq.tokens[i]);
  }
  return out + "]";
}

void check_same_support(const SeqDistribution& p, const SeqDistribution& q) {
  if (p.size() != q.size() || p.logp.size() != p.size() || q.logp.size() != q.size())
    throw SupportError("distributions have different support sizes");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.support[i] != q.support[i]) throw SupportError("support mismatch at " + describe(p.support[i]));
}

}  // namespace

double SeqDistribution::prob(std::size_t i) const { return std::exp(logp.at(i)); }

void SeqDistribution::check_normalized(double tol) const {
  double s = 0.0;
  for (double lp : logp) s += std::exp(lp);
  if (std::abs(s - 1.0) > tol) throw NumericalError("distribution sums to " + std::to_string(s));
}

double enumeration_count(int vocab_size, int max_len) {
  const double b = static_cast<double>(vocab_size - 1);
  double total = 0.0, term = 1.0;
  for (int j = 0; j <= max_len; ++j) {
    total += term;
    term *= b;
  }
  return total;
}

std::vector<TokenSeq> enumerate(const Vocab& vocab, int max_len, double cap) {
  const double required = std::pow(static_cast<double>(vocab.size()), max_len);
  if (required > cap) throw CapExceededError(required, cap);
  std::vector<TokenSeq> out;
  out.reserve(static_cast<std::size_t>(enumeration_count(vocab.size(), max_len)));
  std::vector<int> prefix;
  auto rec = [&](auto&& self) -> void {
    for (int tok = 0; tok < vocab.size(); ++tok) {
      prefix.push_back(tok);
      if (tok == vocab.eos() || static_cast<int>(prefix.size()) == max_len) out.push_back(make_seq(vocab, prefix));
      else self(self);
      prefix.pop_back();
    }
  };
  rec(rec);
  return out;
}

SeqDistribution policy_table(const Policy& policy, const Prompt& prompt, double cap) {
  const Vocab& vocab = policy.vocab();
  const double required = std::pow(static_cast<double>(vocab.size()), policy.max_len());
  if (required > cap) throw CapExceededError(required, cap);
  SeqDistribution dist;
  std::vector<int> prefix;
  // Walk the prefix tree once so each context is evaluated a single time.
  auto rec = [&](auto&& self, double acc) -> void {
    const auto lp = next_token_logprobs(policy, prompt, prefix);
    for (int tok = 0; tok < vocab.size(); ++tok) {
      prefix.push_back(tok);
      const double next = acc + lp[static_cast<std::size_t>(tok)];
      if (tok == vocab.eos() || static_cast<int>(prefix.size()) == policy.max_len()) {
        dist.support.push_back(make_seq(vocab, prefix));
        dist.logp.push_back(next);
      } else {
        self(self, next);
      }
      prefix.pop_back();
    }
  };
  rec(rec, 0.0);
  return dist;
}

OracleTable gibbs_table(std::vector<TokenSeq> support, std::vector<double> log_ref, std::vector<double> reward,
                        double beta) {
  if (!(beta > 0.0)) throw ConfigError("beta must be positive");
  if (support.size() != log_ref.size() || support.size() != reward.size())
    throw ConfigError("oracle columns have different lengths");
  OracleTable t;
  t.beta = beta;
  std::vector<double> scaled(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) scaled[i] = log_ref[i] + reward[i] / beta;
  t.log_z = logsumexp(scaled);
  if (!std::isfinite(t.log_z)) throw NumericalError("partition function is not finite");
  t.log_optimal.resize(support.size());
  for (std::size_t i = 0; i < support.size(); ++i) t.log_optimal[i] = scaled[i] - t.log_z;
  t.support = std::move(support);
  t.log_ref = std::move(log_ref);
  t.reward = std::move(reward);
  return t;
}

OracleTable optimal_policy(const Policy& ref, const RewardFn& reward, double beta, const Prompt& prompt, double cap) {
  SeqDistribution r = policy_table(ref, prompt, cap);
  std::vector<double> rewards;
  rewards.reserve(r.size());
  for (const auto& y : r.support) rewards.push_back(reward(prompt, y));
  OracleTable t = gibbs_table(std::move(r.support), std::move(r.logp), std::move(rewards), beta);
  t.prompt = prompt;
  return t;
}

void attach_policy(OracleTable& table, const Policy& policy) {
  SeqDistribution p = policy_table(policy, table.prompt);
  check_same_support(p, table.ref());
  table.log_policy = std::move(p.logp);
}

double exact_kl(const SeqDistribution& p, const SeqDistribution& q) {
  check_same_support(p, q);
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.logp[i] == -std::numeric_limits<double>::infinity()) continue;
    if (q.logp[i] == -std::numeric_limits<double>::infinity())
      throw SupportError("q assigns zero probability to " + describe(p.support[i]));
    kl += std::exp(p.logp[i]) * (p.logp[i] - q.logp[i]);
  }
  return kl;
}

double exact_cross_entropy(const SeqDistribution& p, const SeqDistribution& q) {
  check_same_support(p, q);
  double h = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.logp[i] == -std::numeric_limits<double>::infinity()) continue;
    if (q.logp[i] == -std::numeric_limits<double>::infinity())
      throw SupportError("q assigns zero probability to " + describe(p.support[i]));
    h -= std::exp(p.logp[i]) * q.logp[i];
  }
  return h;
}

double exact_entropy(const SeqDistribution& p) {
  double h = 0.0;
  for (double lp : p.logp)
    if (lp != -std::numeric_limits<double>::infinity()) h -= std::exp(lp) * lp;
  return h;
}

double per_token_kl(const Policy& p, const Policy& q, const Prompt& prompt) {
  if (p.vocab() != q.vocab() || p.max_len() != q.max_len()) throw ConfigError("policies have different shapes");
  const int eos = p.vocab().eos();
  std::vector<int> prefix;
  auto rec = [&](auto&& self, double log_reach) -> double {
    const auto lp = next_token_logprobs(p, prompt, prefix);
    const auto lq = next_token_logprobs(q, prompt, prefix);
    double local = 0.0;
    for (std::size_t k = 0; k < lp.size(); ++k) local += std::exp(lp[k]) * (lp[k] - lq[k]);
    double total = std::exp(log_reach) * local;
    if (static_cast<int>(prefix.size()) + 1 >= p.max_len()) return total;
    for (int tok = 0; tok < p.vocab().size(); ++tok) {
      if (tok == eos) continue;
      prefix.push_back(tok);
      total += self(self, log_reach + lp[static_cast<std::size_t>(tok)]);
      prefix.pop_back();
    }
    return total;
  };
  return rec(rec, 0.0);
}

double exact_objective(const SeqDistribution& pi, const SeqDistribution& ref, const SeqDistribution& behavior,
                       const PairPreference& pref, double beta, PsiMode mode) {
  if (mode == PsiMode::LearnedReward) throw ConfigError("learned-reward mode needs per-sequence rewards");
  check_same_support(pi, behavior);
  double expected = 0.0;
  for (std::size_t i = 0; i < pi.size(); ++i) {
    const double wi = std::exp(pi.logp[i]);
    if (wi == 0.0) continue;
    for (std::size_t j = 0; j < behavior.size(); ++j) {
      const double wj = std::exp(behavior.logp[j]);
      if (wj == 0.0) continue;
      const double q = pref(i, j);
      const double psi = mode == PsiMode::Identity ? q : std::log(q / (1.0 - q));
      expected += wi * wj * psi;
    }
  }
  return expected - beta * exact_kl(pi, ref);
}

double exact_objective(const SeqDistribution& pi, const SeqDistribution& ref, const SeqDistribution& behavior,
                       std::span<const double> rewards, double beta, PsiMode mode) {
  if (rewards.size() != pi.size()) throw ConfigError("reward column has the wrong length");
  double expected = 0.0;
  switch (mode) {
    case PsiMode::LearnedReward:
      for (std::size_t i = 0; i < pi.size(); ++i) expected += std::exp(pi.logp[i]) * rewards[i];
      break;
    case PsiMode::BtLogOdds:
      // log-odds of sigma(r - r') is r - r', so the double sum separates.
      check_same_support(pi, behavior);
      for (std::size_t i = 0; i < pi.size(); ++i)
        expected += (std::exp(pi.logp[i]) - std::exp(behavior.logp[i])) * rewards[i];
      break;
    case PsiMode::Identity:
      return exact_objective(
          pi, ref, behavior, [&](std::size_t i, std::size_t j) { return sigmoid(rewards[i] - rewards[j]); }, beta,
          mode);
  }
  return expected - beta * exact_kl(pi, ref);
}

double exact_objective(const Policy& policy, const Policy& ref, const RewardFn& reward, double beta,
                       const Prompt& prompt, PsiMode mode, const Policy* behavior) {
  const SeqDistribution pi = policy_table(policy, prompt);
  const SeqDistribution r = policy_table(ref, prompt);
  const SeqDistribution mu = behavior ? policy_table(*behavior, prompt) : r;
  std::vector<double> rewards;
  rewards.reserve(pi.size());
  for (const auto& y : pi.support) rewards.push_back(reward(prompt, y));
  return exact_objective(pi, r, mu, rewards, beta, mode);
}

void write_oracle_tsv(const OracleTable& table, const Vocab& vocab, std::ostream& out) {
  const bool with_policy = table.log_policy.size() == table.support.size() && !table.support.empty();
  out << "sequence\tp_ref\treward\tp_opt";
  if (with_policy) out << "\tp_policy";
  out << '\n';
  out.precision(17);
  for (std::size_t i = 0; i < table.support.size(); ++i) {
    out << to_string(vocab, table.support[i]) << '\t' << std::exp(table.log_ref[i]) << '\t' << table.reward[i] << '\t'
        << std::exp(table.log_optimal[i]);
    if (with_policy) out << '\t' << std::exp(table.log_policy[i]);
    out << '\n';
  }
}

}  // namespace preflab
