#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "preflab/policy.hpp"

namespace preflab {

inline constexpr double kDefaultEnumerationCap = 2e6;

/// Explicit distribution over a finite list of completions, in log space.
struct SeqDistribution {
  std::vector<TokenSeq> support;
  std::vector<double> logp;

  std::size_t size() const noexcept { return support.size(); }
  double prob(std::size_t i) const;
  /// Throws NumericalError unless sum of probabilities is 1 within `tol`.
  void check_normalized(double tol = 1e-9) const;
};

using RewardFn = std::function<double(const Prompt&, const TokenSeq&)>;

/// Number of complete sequences (eos-terminated, or exactly max_len long):
/// sum_{j=0}^{L} (V-1)^j.
double enumeration_count(int vocab_size, int max_len);

/// Every complete sequence exactly once, in lexicographic token order.
/// Refuses (CapExceededError) when |V|^L exceeds `cap`.
std::vector<TokenSeq> enumerate(const Vocab& vocab, int max_len, double cap = kDefaultEnumerationCap);

/// Exact sequence distribution of a policy for one prompt.
SeqDistribution policy_table(const Policy& policy, const Prompt& prompt, double cap = kDefaultEnumerationCap);

/// Enumeration of a prompt with reference, reward, Gibbs-optimal and
/// (optionally) current-policy columns.
struct OracleTable {
  Prompt prompt;
  double beta = 0.0;
  std::vector<TokenSeq> support;
  std::vector<double> log_ref;
  std::vector<double> reward;
  std::vector<double> log_optimal;
  std::vector<double> log_policy;  // empty unless attached
  double log_z = 0.0;

  SeqDistribution ref() const { return {support, log_ref}; }
  SeqDistribution optimal() const { return {support, log_optimal}; }
  SeqDistribution policy() const { return {support, log_policy}; }
};

/// pi*(y) = pi_ref(y) exp(r(y)/beta) / Z over an explicit support, computed
/// with log-sum-exp.
OracleTable gibbs_table(std::vector<TokenSeq> support, std::vector<double> log_ref, std::vector<double> reward,
                        double beta);

OracleTable optimal_policy(const Policy& ref, const RewardFn& reward, double beta, const Prompt& prompt,
                           double cap = kDefaultEnumerationCap);

/// Adds a log_policy column for `policy` (same support order).
void attach_policy(OracleTable& table, const Policy& policy);

/// sum p log(p/q). Tables must share support order; q(y) = 0 where p(y) > 0
/// raises SupportError naming the sequence.
double exact_kl(const SeqDistribution& p, const SeqDistribution& q);
/// -sum p log q.
double exact_cross_entropy(const SeqDistribution& p, const SeqDistribution& q);
/// -sum p log p.
double exact_entropy(const SeqDistribution& p);

/// Expected per-token KL, sum over prefixes of p(prefix) KL(p(.|prefix) || q(.|prefix)),
/// computed by walking the prefix tree (no sequence-level table).
double per_token_kl(const Policy& p, const Policy& q, const Prompt& prompt);

enum class PsiMode {
  BtLogOdds,     // Psi(q) = log(q / (1 - q)) with p* = sigma(r(y) - r(y'))
  Identity,      // Psi(q) = q
  LearnedReward  // E_pi[r] directly
};

/// Pairwise preference p*(y_i > y_j) on support indices.
using PairPreference = std::function<double(std::size_t, std::size_t)>;

/// E_{y~pi, y'~mu}[Psi(p*(y > y'))] - beta KL(pi || ref) over explicit tables.
double exact_objective(const SeqDistribution& pi, const SeqDistribution& ref, const SeqDistribution& behavior,
                       const PairPreference& pref, double beta, PsiMode mode);

/// Reward-based form: p* = sigma(r_i - r_j) for the pairwise modes.
double exact_objective(const SeqDistribution& pi, const SeqDistribution& ref, const SeqDistribution& behavior,
                       std::span<const double> rewards, double beta, PsiMode mode);

/// Policy wrapper; the behavior policy defaults to the reference.
double exact_objective(const Policy& policy, const Policy& ref, const RewardFn& reward, double beta,
                       const Prompt& prompt, PsiMode mode, const Policy* behavior = nullptr);

/// Tab-separated export: sequence, p_ref, reward, p_opt[, p_policy].
void write_oracle_tsv(const OracleTable& table, const Vocab& vocab, std::ostream& out);

}  // namespace preflab
