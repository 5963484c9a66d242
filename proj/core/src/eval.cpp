#include "preflab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "preflab/error.hpp"
#include "preflab/motion.hpp"
#include "preflab/numeric.hpp"
#include "preflab/random.hpp"
#include "preflab/reward_model.hpp"

namespace preflab {

namespace {

double distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

SampleOptions sample_opts(double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  return {temperature, false};
}

}  // namespace

WinRate win_rate(const Policy& a, const Policy& b, std::span<const Prompt> prompts, const ScoreFn& judge,
                 double temperature, std::size_t n, double tie_band, std::uint64_t seed) {
  if (n == 0) throw ConfigError("win rate needs n >= 1");
  if (prompts.empty()) throw ConfigError("win rate needs prompts");
  if (!(tie_band >= 0.0)) throw ConfigError("tie band must be nonnegative");
  const auto opts = sample_opts(temperature);
  std::size_t wins = 0, ties = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Prompt& p = prompts[i % prompts.size()];
    Rng ra(derive_seed(seed, i, 0));
    Rng rb(derive_seed(seed, i, 1));
    const double sa = judge(p, sample(a, p, opts, ra));
    const double sb = judge(p, sample(b, p, opts, rb));
    if (std::abs(sa - sb) <= tie_band) ++ties;
    else if (sa > sb) ++wins;
  }
  WinRate w;
  w.n = n;
  const double dn = static_cast<double>(n);
  w.win = static_cast<double>(wins) / dn;
  w.tie = static_cast<double>(ties) / dn;
  w.loss = static_cast<double>(n - wins - ties) / dn;
  return w;
}

double mean_pairwise_distance(const FeatureMatrix& xs) {
  if (xs.size() < 2) throw ConfigError("pairwise distance needs at least two items");
  double s = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      s += distance(xs[i], xs[j]);
      ++count;
    }
  return s / static_cast<double>(count);
}

double diversity(const FeatureMatrix& xs, std::size_t max_pairs, std::uint64_t seed) {
  if (xs.size() < 2) throw ConfigError("diversity needs at least two completions");
  const std::size_t all = xs.size() * (xs.size() - 1) / 2;
  if (max_pairs == 0 || max_pairs >= all) return mean_pairwise_distance(xs);
  Rng rng(derive_seed(seed, 0x646976ULL));
  const double n = static_cast<double>(xs.size());
  double s = 0.0;
  for (std::size_t k = 0; k < max_pairs; ++k) {
    const auto i = std::min(xs.size() - 1, static_cast<std::size_t>(uniform01(rng) * n));
    auto j = std::min(xs.size() - 2, static_cast<std::size_t>(uniform01(rng) * (n - 1)));
    if (j >= i) ++j;
    s += distance(xs[i], xs[j]);
  }
  return s / static_cast<double>(max_pairs);
}

double diversity(const Vocab& vocab, std::span<const TokenSeq> completions, int max_len, std::size_t max_pairs,
                 std::uint64_t seed) {
  FeatureMatrix xs;
  for (const auto& c : completions) xs.push_back(sequence_features(vocab, c, max_len));
  return diversity(xs, max_pairs, seed);
}

double multimodality(const Policy& policy, std::span<const Prompt> prompts, std::size_t n_per_prompt,
                     double temperature, std::uint64_t seed, bool greedy) {
  if (n_per_prompt < 2) throw ConfigError("multimodality needs n_per_prompt >= 2");
  if (prompts.empty()) throw ConfigError("multimodality needs prompts");
  SampleOptions opts{temperature, greedy};
  if (!greedy) sample_opts(temperature);
  double total = 0.0;
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    FeatureMatrix xs;
    for (std::size_t k = 0; k < n_per_prompt; ++k) {
      Rng rng(derive_seed(seed, p, k));
      xs.push_back(sequence_features(policy.vocab(), sample(policy, prompts[p], opts, rng), policy.max_len()));
    }
    total += mean_pairwise_distance(xs);
  }
  return total / static_cast<double>(prompts.size());
}

namespace {

Eigen::MatrixXd to_matrix(const FeatureMatrix& xs) {
  const auto n = static_cast<Eigen::Index>(xs.size());
  const auto d = static_cast<Eigen::Index>(xs.front().size());
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (static_cast<Eigen::Index>(xs[static_cast<std::size_t>(i)].size()) != d)
      throw ConfigError("feature rows differ in dimension");
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  }
  return m;
}

// Eigenvalues of a symmetric PSD matrix, clamping round-off negatives.
Eigen::VectorXd psd_eigenvalues(const Eigen::MatrixXd& m, Eigen::MatrixXd* vectors) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-8 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol) throw NumericalError("covariance product has eigenvalue " + std::to_string(ev(i)));
    ev(i) = std::max(ev(i), 0.0);
  }
  if (vectors) *vectors = es.eigenvectors();
  return ev;
}

}  // namespace

double frechet_distance(const FeatureMatrix& a, const FeatureMatrix& b) {
  if (a.empty() || b.empty()) throw ConfigError("frechet distance needs samples");
  const std::size_t d = a.front().size();
  if (b.front().size() != d) throw ConfigError("feature sets differ in dimension");
  if (a.size() < d + 1 || b.size() < d + 1)
    throw ConfigError("frechet distance needs at least dim + 1 = " + std::to_string(d + 1) + " samples per set");
  const Eigen::MatrixXd xa = to_matrix(a);
  const Eigen::MatrixXd xb = to_matrix(b);
  const Eigen::RowVectorXd ma = xa.colwise().mean();
  const Eigen::RowVectorXd mb = xb.colwise().mean();
  const Eigen::MatrixXd ca = xa.rowwise() - ma;
  const Eigen::MatrixXd cb = xb.rowwise() - mb;
  const Eigen::MatrixXd sa = (ca.transpose() * ca) / static_cast<double>(a.size() - 1);
  const Eigen::MatrixXd sb = (cb.transpose() * cb) / static_cast<double>(b.size() - 1);

  Eigen::MatrixXd va;
  const Eigen::VectorXd ea = psd_eigenvalues(sa, &va);
  const Eigen::MatrixXd root_a = va * ea.cwiseSqrt().asDiagonal() * va.transpose();
  Eigen::MatrixXd m = root_a * sb * root_a;
  m = 0.5 * (m + m.transpose());
  const double tr_root = psd_eigenvalues(m, nullptr).cwiseSqrt().sum();
  const double fd = (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
  return std::max(fd, 0.0);
}

RetrievalResult retrieval_precision(const Policy& policy, std::span<const Prompt> prompts, const ScoreFn& judge,
                                    std::span<const std::size_t> k_list, std::size_t pool_size, std::uint64_t seed,
                                    double temperature, std::span<const Prompt> distractors) {
  if (k_list.empty()) throw ConfigError("retrieval needs at least one k");
  const std::size_t kmax = *std::max_element(k_list.begin(), k_list.end());
  if (pool_size < kmax || pool_size < 1) throw ConfigError("pool_size must be >= max(k)");
  if (prompts.empty()) throw ConfigError("retrieval needs prompts");
  const auto opts = sample_opts(temperature);

  std::vector<Prompt> source(distractors.begin(), distractors.end());
  if (source.empty()) source = gen_unique_prompts(derive_seed(seed, 0x726574ULL), 3 * pool_size, 7);

  RetrievalResult out;
  out.k.assign(k_list.begin(), k_list.end());
  std::vector<std::size_t> hits(k_list.size(), 0);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const Prompt& truth = prompts[i];
    Rng rng(derive_seed(seed, i, 1));
    const TokenSeq y = sample(policy, truth, opts, rng);

    const auto ideal = ideal_moves(truth.spec);
    std::vector<const Prompt*> cands;
    for (const auto& p : source)
      if (ideal_moves(p.spec) != ideal) cands.push_back(&p);
    if (cands.size() + 1 < pool_size) throw ConfigError("not enough distinct distractor prompts for the pool");
    Rng pick(derive_seed(seed, i, 2));
    std::shuffle(cands.begin(), cands.end(), pick);
    cands.resize(pool_size - 1);

    // Rank: strictly better distractors, then a random slot among ties.
    const double s_true = judge(truth, y);
    std::size_t better = 0, tied = 0;
    for (const Prompt* p : cands) {
      const double s = judge(*p, y);
      if (s > s_true) ++better;
      else if (s == s_true) ++tied;
    }
    const auto slot = std::min(tied, static_cast<std::size_t>(uniform01(pick) * static_cast<double>(tied + 1)));
    const std::size_t rank = better + slot + 1;
    for (std::size_t k = 0; k < k_list.size(); ++k) hits[k] += rank <= k_list[k] ? 1 : 0;
  }
  out.n = prompts.size();
  for (std::size_t h : hits) out.precision.push_back(static_cast<double>(h) / static_cast<double>(out.n));
  return out;
}

RankingAgreement ranking_agreement(const Policy& policy, const Policy& ref, std::span<const PreferencePair> pairs,
                                   const ScoreFn& truth, double min_gap) {
  RankingAgreement r;
  double agree = 0.0;
  for (const auto& p : pairs) {
    const double sc = truth(p.prompt, p.chosen);
    const double sr = truth(p.prompt, p.rejected);
    if (!(std::abs(sc - sr) > min_gap)) continue;
    const double hc = logprob(policy, p.prompt, p.chosen) - logprob(ref, p.prompt, p.chosen);
    const double hr = logprob(policy, p.prompt, p.rejected) - logprob(ref, p.prompt, p.rejected);
    const double h = hc - hr;
    if (h == 0.0) agree += 0.5;
    else if ((h > 0.0) == (sc > sr)) agree += 1.0;
    ++r.n;
  }
  if (r.n == 0) throw EmptyDatasetError("no pairs exceed the score gap");
  r.agreement = agree / static_cast<double>(r.n);
  return r;
}

EvalReport evaluate(const Policy& policy, const Policy& baseline, std::span<const Prompt> prompts,
                    const ScoreFn& judge, const EvalConfig& cfg) {
  if (prompts.empty()) throw ConfigError("evaluation needs prompts");
  EvalReport r;
  r.temperature = cfg.temperature;
  r.seed = cfg.seed;
  r.samples = cfg.comparisons;
  r.vs_baseline = win_rate(policy, baseline, prompts, judge, cfg.temperature, cfg.comparisons, cfg.tie_band, cfg.seed);

  const auto opts = sample_opts(cfg.temperature);
  FeatureMatrix gen, real;
  std::vector<double> scores;
  for (std::size_t i = 0; i < cfg.comparisons; ++i) {
    const Prompt& p = prompts[i % prompts.size()];
    Rng rng(derive_seed(cfg.seed, i, 0));  // same stream as the win-rate sample of `policy`
    const TokenSeq y = sample(policy, p, opts, rng);
    scores.push_back(judge(p, y));
    gen.push_back(sequence_features(policy.vocab(), y, policy.max_len()));
    real.push_back(sequence_features(policy.vocab(), ideal_sequence(policy.vocab(), p.spec, policy.max_len()),
                                     policy.max_len()));
  }
  r.mean_score = mean(scores);
  r.diversity = diversity(gen, cfg.diversity_pairs, cfg.seed);
  r.frechet = frechet_distance(gen, real);
  r.multimodality = multimodality(policy, prompts, cfg.mm_per_prompt, cfg.temperature, derive_seed(cfg.seed, 0x6d6dULL));
  r.retrieval = retrieval_precision(policy, prompts, judge, cfg.k_list, cfg.pool_size, cfg.seed, cfg.temperature);
  return r;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["temperature"] = r.temperature;
  j["win"] = r.vs_baseline.win;
  j["tie"] = r.vs_baseline.tie;
  j["loss"] = r.vs_baseline.loss;
  j["comparisons"] = r.vs_baseline.n;
  j["mean_score"] = r.mean_score;
  j["diversity"] = r.diversity;
  j["frechet"] = r.frechet;
  j["multimodality"] = r.multimodality;
  nlohmann::ordered_json rp;
  for (std::size_t i = 0; i < r.retrieval.k.size(); ++i)
    rp["top" + std::to_string(r.retrieval.k[i])] = r.retrieval.precision[i];
  j["retrieval"] = rp;
  j["samples"] = r.samples;
  j["seed"] = r.seed;
  return j;
}

}  // namespace preflab
