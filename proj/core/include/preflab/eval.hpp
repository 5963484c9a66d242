#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "preflab/policy.hpp"
#include "preflab/pref_data.hpp"

namespace preflab {

using FeatureMatrix = std::vector<std::vector<double>>;

struct WinRate {
  double win = 0.0;
  double tie = 0.0;
  double loss = 0.0;
  std::size_t n = 0;
};

inline constexpr double kDefaultTieBand = 0.02;

/// `n` head-to-head comparisons cycling over `prompts`; comparison i samples
/// each policy with its own generator seeded from (seed, i).
WinRate win_rate(const Policy& a, const Policy& b, std::span<const Prompt> prompts, const ScoreFn& judge,
                 double temperature, std::size_t n, double tie_band = kDefaultTieBand, std::uint64_t seed = 0);

/// Mean Euclidean distance over all pairs.
double mean_pairwise_distance(const FeatureMatrix& xs);

/// Mean Euclidean distance over `max_pairs` seeded random pairs (all pairs
/// when max_pairs is 0 or covers them). Needs at least 2 rows.
double diversity(const FeatureMatrix& xs, std::size_t max_pairs = 0, std::uint64_t seed = 0);

/// Completions mapped through sequence_features first.
double diversity(const Vocab& vocab, std::span<const TokenSeq> completions, int max_len, std::size_t max_pairs = 0,
                 std::uint64_t seed = 0);

/// Mean over prompts of the mean pairwise feature distance among that
/// prompt's `n_per_prompt` samples.
double multimodality(const Policy& policy, std::span<const Prompt> prompts, std::size_t n_per_prompt,
                     double temperature, std::uint64_t seed, bool greedy = false);

/// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) with unbiased
/// covariances. The matrix root is taken as sqrt(S_a)^(1/2) S_b sqrt(S_a)^(1/2)
/// so that every decomposition is symmetric.
double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b);

struct RetrievalResult {
  std::vector<std::size_t> k;
  std::vector<double> precision;
  std::size_t n = 0;
};

/// For every prompt, sample one completion and rank its prompt among
/// `pool_size - 1` distractors by judge score (ties broken by a seeded
/// shuffle). Distractors come from `distractors`, or a generated prompt set
/// when that is empty; prompts sharing the true ideal path are excluded.
RetrievalResult retrieval_precision(const Policy& policy, std::span<const Prompt> prompts, const ScoreFn& judge,
                                    std::span<const std::size_t> k_list, std::size_t pool_size, std::uint64_t seed,
                                    double temperature = 1.0, std::span<const Prompt> distractors = {});

/// Fraction of pairs with |s(chosen) - s(rejected)| > min_gap where the
/// policy's log-ratio against `ref` orders the pair like the scorer. Ties in
/// the log-ratio count one half.
struct RankingAgreement {
  double agreement = 0.0;
  std::size_t n = 0;
};
RankingAgreement ranking_agreement(const Policy& policy, const Policy& ref, std::span<const PreferencePair> pairs,
                                   const ScoreFn& truth, double min_gap = 0.15);

struct EvalConfig {
  double temperature = 1.0;
  std::size_t comparisons = 200;
  double tie_band = kDefaultTieBand;
  std::size_t mm_per_prompt = 10;
  std::size_t diversity_pairs = 300;
  std::size_t pool_size = 32;
  std::vector<std::size_t> k_list{1, 2, 3};
  std::uint64_t seed = 0;
};

struct EvalReport {
  double temperature = 0.0;
  WinRate vs_baseline;
  double mean_score = 0.0;
  double diversity = 0.0;
  double frechet = 0.0;
  double multimodality = 0.0;
  RetrievalResult retrieval;
  std::size_t samples = 0;
  std::uint64_t seed = 0;
};

/// Samples `comparisons` completions cycling over prompts and reports every
/// metric. Frechet compares sample features against the ideal completions
/// of the same prompts.
EvalReport evaluate(const Policy& policy, const Policy& baseline, std::span<const Prompt> prompts,
                    const ScoreFn& judge, const EvalConfig& cfg);

nlohmann::ordered_json to_json(const EvalReport& r);

}  // namespace preflab
