#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>

#include <Eigen/Dense>

#include "preflab/motion.hpp"
#include "preflab/random.hpp"

namespace preflab::testing {

std::vector<double> central_diff(const std::function<double(const std::vector<double>&)>& f,
                                 const std::vector<double>& x, double h) {
  std::vector<double> g(x.size());
  std::vector<double> xp = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] = x[i] + h;
    const double up = f(xp);
    xp[i] = x[i] - h;
    const double dn = f(xp);
    xp[i] = x[i];
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

double max_rel_error(std::span<const double> a, std::span<const double> b) {
  double scale = 1e-8, worst = 0.0;
  for (double v : b) scale = std::max(scale, std::abs(v));
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst / scale;
}

double brute_logprob(const Policy& p, const Prompt& prompt, const TokenSeq& y) {
  const int v = p.vocab().size();
  long double total = 0.0L;
  std::vector<double> logits(static_cast<std::size_t>(v));
  for (std::size_t t = 0; t < y.size(); ++t) {
    p.logits(prompt, std::span<const int>(y.tokens.data(), t), logits);
    long double z = 0.0L;
    for (double l : logits) z += std::exp(static_cast<long double>(l));
    total += static_cast<long double>(logits[static_cast<std::size_t>(y.tokens[t])]) - std::log(z);
  }
  return static_cast<double>(total);
}

std::vector<double> brute_neural_logits(const NeuralModel& m, const Prompt& prompt, std::span<const int> prefix) {
  std::vector<double> x;
  m.encode(prompt, prefix, x);
  const int in = static_cast<int>(x.size());
  const int h = m.shape().hidden;
  const int v = m.vocab_size();
  const double* p = m.params().data();
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const RowMat> w1(p, h, in);
  Eigen::Map<const Eigen::VectorXd> b1(p + h * in, h);
  Eigen::Map<const RowMat> w2(p + h * in + h, v, h);
  Eigen::Map<const Eigen::VectorXd> b2(p + h * in + h + v * h, v);
  Eigen::Map<const Eigen::VectorXd> xv(x.data(), in);
  const Eigen::VectorXd hid = (w1 * xv + b1).array().tanh().matrix();
  const Eigen::VectorXd z = w2 * hid + b2;
  return {z.data(), z.data() + v};
}

std::size_t brute_edit(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<std::vector<std::size_t>> d(a.size() + 1, std::vector<std::size_t>(b.size() + 1));
  for (std::size_t i = 0; i <= a.size(); ++i) d[i][0] = i;
  for (std::size_t j = 0; j <= b.size(); ++j) d[0][j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i)
    for (std::size_t j = 1; j <= b.size(); ++j)
      d[i][j] = std::min({d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
  return d[a.size()][b.size()];
}

namespace {
void grow(std::vector<int>& cur, int v, int eos, int L, std::vector<TokenSeq>& out) {
  for (int t = 0; t < v; ++t) {
    cur.push_back(t);
    if (t == eos) {
      out.push_back({cur, true});
    } else if (static_cast<int>(cur.size()) == L) {
      out.push_back({cur, false});
    } else {
      grow(cur, v, eos, L, out);
    }
    cur.pop_back();
  }
}
}  // namespace

std::vector<TokenSeq> brute_enumerate(int vocab_size, int eos, int max_len) {
  std::vector<TokenSeq> out;
  std::vector<int> cur;
  if (max_len == 0) return {TokenSeq{}};
  grow(cur, vocab_size, eos, max_len, out);
  return out;
}

double brute_frechet(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b) {
  auto stats = [](const std::vector<std::vector<double>>& xs, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
    const auto n = static_cast<Eigen::Index>(xs.size());
    const auto d = static_cast<Eigen::Index>(xs.front().size());
    Eigen::MatrixXd m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < d; ++j) m(i, j) = xs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    mu = m.colwise().mean().transpose();
    const Eigen::MatrixXd c = m.rowwise() - mu.transpose();
    cov = c.transpose() * c / static_cast<double>(n - 1);
  };
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd sa, sb;
  stats(a, ma, sa);
  stats(b, mb, sb);
  // Tr((Sa Sb)^(1/2)) = sum of square roots of the (real, nonnegative)
  // eigenvalues of Sa Sb.
  Eigen::EigenSolver<Eigen::MatrixXd> es(sa * sb);
  double tr_root = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) tr_root += std::sqrt(std::max(0.0, es.eigenvalues()[i].real()));
  return (ma - mb).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_root;
}

Policy random_tabular(const Vocab& v, int max_len, const Prompt& prompt, std::uint64_t seed, double std) {
  Policy p = Policy::tabular(v, max_len);
  p.materialize_all(prompt);
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, std);
  for (double& x : p.mutable_params()) x = n(rng);
  return p;
}

PreferencePair random_pair(const Policy& gen, const Prompt& prompt, std::uint64_t seed, Degree degree) {
  PreferencePair pair;
  pair.prompt = prompt;
  pair.degree = degree;
  for (std::uint64_t k = 0;; ++k) {
    pair.chosen = sample(gen, prompt, 1.0, derive_seed(seed, k, 1));
    pair.rejected = sample(gen, prompt, 1.0, derive_seed(seed, k, 2));
    if (!(pair.chosen == pair.rejected)) return pair;
  }
}

PrefDataset labeled_fixture(std::uint64_t seed) {
  const Vocab v = Vocab::motion();
  const auto prompts = gen_unique_prompts(11, 6, 4);
  const Policy gen = Policy::neural(v, 4, {3, 8}, 3, 1.0);
  const std::vector<std::pair<Degree, std::size_t>> counts{{Degree::MuchBetter, 996},
                                                           {Degree::Better, 607},
                                                           {Degree::SlightlyBetter, 497},
                                                           {Degree::NegligiblyBetter, 116},
                                                           {Degree::Skipped, 1312}};
  PrefDataset ds;
  std::uint64_t i = 0;
  for (const auto& [degree, n] : counts)
    for (std::size_t k = 0; k < n; ++k, ++i) {
      PreferencePair p = random_pair(gen, prompts[i % prompts.size()], derive_seed(seed, i), degree);
      p.labeler = "fixture";
      p.source = Source::Human;
      p.seeds = {i, i + 1};
      ds.pairs.push_back(std::move(p));
    }
  Rng rng(seed);
  std::shuffle(ds.pairs.begin(), ds.pairs.end(), rng);
  return ds;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("preflab-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace preflab::testing
