#pragma once

// Reference computations written independently of the library code paths
// they check: plain loops, long double accumulation, Eigen decompositions.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "preflab/policy.hpp"
#include "preflab/pref_data.hpp"

namespace preflab::testing {

/// Central differences of f around x.
std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                 const std::vector<double>& x, double h = 1e-5);

/// max_i |a_i - b_i| / max(max_i |b_i|, 1e-8).
double max_rel_error(std::span<const double> a, std::span<const double> b);

/// log pi(y|x) from raw logits with an explicit long-double softmax chain.
double brute_logprob(const Policy& p, const Prompt& prompt, const TokenSeq& y);

/// Neural forward pass with Eigen on the documented parameter layout.
std::vector<double> brute_neural_logits(const NeuralModel& m, const Prompt& prompt, std::span<const int> prefix);

/// Levenshtein distance on integer strings by full DP table.
std::size_t brute_edit(const std::vector<int>& a, const std::vector<int>& b);

/// Every complete sequence by explicit recursion (eos-terminated or length L).
std::vector<TokenSeq> brute_enumerate(int vocab_size, int eos, int max_len);

/// Frechet distance via Eigen EigenSolver on the non-symmetric product.
double brute_frechet(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b);

/// Policy with every context reachable from `prompt` materialized and random
/// N(0, std) logits.
Policy random_tabular(const Vocab& v, int max_len, const Prompt& prompt, std::uint64_t seed, double std = 1.0);

/// A preference pair with two distinct sampled completions.
PreferencePair random_pair(const Policy& gen, const Prompt& prompt, std::uint64_t seed,
                           Degree degree = Degree::Better);

/// 3,528 synthetic records with degree counts 996 / 607 / 497 / 116 and
/// 1,312 skipped, in seeded shuffled order.
PrefDataset labeled_fixture(std::uint64_t seed = 7);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& name);

}  // namespace preflab::testing
