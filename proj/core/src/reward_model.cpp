#include "preflab/reward_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "preflab/error.hpp"
#include "preflab/hash.hpp"
#include "preflab/numeric.hpp"
#include "preflab/random.hpp"

namespace preflab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Features

std::vector<double> sequence_features(const Vocab& vocab, const TokenSeq& seq, int max_len) {
  const Path2D path = decode(vocab, seq);
  const auto moves = moves_of(path);
  const double len = static_cast<double>(max_len);
  std::vector<double> f(kSequenceFeatureDim, 0.0);
  for (Move m : moves) f[static_cast<std::size_t>(m)] += 1.0 / len;
  const Point end = path.points.back();
  f[5] = end.x / len;
  f[6] = end.y / len;
  f[7] = (std::abs(end.x) + std::abs(end.y)) / len;
  f[8] = static_cast<double>(moves.size()) / len;
  f[9] = seq.terminated ? 1.0 : 0.0;
  std::set<std::pair<int, int>> cells;
  for (const Point& p : path.points) cells.insert({p.x, p.y});
  f[10] = static_cast<double>(cells.size()) / (len + 1.0);
  return f;
}

std::vector<double> handcrafted_features(const Vocab& vocab, const Prompt& prompt, const TokenSeq& seq, int max_len) {
  std::vector<double> f = sequence_features(vocab, seq, max_len);
  f.resize(kHandcraftedFeatureDim, 0.0);
  f[kSequenceFeatureDim + static_cast<std::size_t>(prompt.spec.tmpl)] = 1.0;

  const Path2D path = decode(vocab, seq);
  const auto moves = moves_of(path);
  const auto ideal = ideal_moves(prompt.spec);
  const double n_ideal = static_cast<double>(ideal.size());
  const std::size_t common = std::min(moves.size(), ideal.size());
  std::size_t matches = 0, prefix = 0;
  bool in_prefix = true;
  for (std::size_t i = 0; i < common; ++i) {
    const bool eq = moves[i] == ideal[i];
    matches += eq ? 1 : 0;
    in_prefix = in_prefix && eq;
    prefix += in_prefix ? 1 : 0;
  }
  Point ideal_end;
  for (Move m : ideal) {
    ideal_end.x += step(m).x;
    ideal_end.y += step(m).y;
  }
  auto count = [](const std::vector<Move>& ms, Move m) {
    return static_cast<double>(std::count(ms.begin(), ms.end(), m));
  };
  const std::size_t o = kSequenceFeatureDim + 5;
  f[o + 0] = static_cast<double>(matches) / n_ideal;
  f[o + 1] = static_cast<double>(prefix) / n_ideal;
  f[o + 2] = 1.0 - std::abs(static_cast<double>(moves.size()) - n_ideal) / static_cast<double>(max_len);
  f[o + 3] = path.points.back() == ideal_end ? 1.0 : 0.0;
  f[o + 4] = 1.0 - std::abs(count(moves, prompt.spec.primary) - count(ideal, prompt.spec.primary)) / n_ideal;
  f[o + 5] = 1.0 - std::abs(count(moves, prompt.spec.secondary) - count(ideal, prompt.spec.secondary)) / n_ideal;
  return f;
}

std::vector<double> expressive_features(const Vocab& vocab, const Prompt& prompt, const TokenSeq& seq, int max_len) {
  std::vector<double> f = handcrafted_features(vocab, prompt, seq, max_len);
  const std::size_t base = f.size();
  f.resize(base + kHashBuckets, 0.0);
  int prev = -1;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const int tok = seq.tokens[i];
    const std::string pos = prompt.id + "|" + std::to_string(i) + "|";
    f[base + fnv1a(pos + std::to_string(tok)) % kHashBuckets] += 1.0;
    f[base + fnv1a(pos + "b" + std::to_string(prev) + "," + std::to_string(tok)) % kHashBuckets] += 1.0;
    prev = tok;
  }
  return f;
}

const char* feature_map_name(FeatureMap f) { return f == FeatureMap::Handcrafted ? "handcrafted" : "expressive"; }
const char* reward_arch_name(RewardArch a) { return a == RewardArch::Linear ? "linear" : "tiny-neural"; }

// ---------------------------------------------------------------------------
// Model

RewardModel::RewardModel(Vocab vocab, int max_len, FeatureMap features, RewardArch arch, int hidden)
    : vocab_(std::move(vocab)), max_len_(max_len), features_(features), arch_(arch), hidden_(hidden) {
  const std::size_t d = feature_dim();
  if (arch_ == RewardArch::Linear) {
    params_.assign(d, 0.0);
  } else {
    if (hidden_ < 1) throw ConfigError("tiny-neural reward needs hidden >= 1");
    const auto h = static_cast<std::size_t>(hidden_);
    params_.assign(h * d + h + h, 0.0);
  }
}

RewardModel RewardModel::linear(Vocab vocab, int max_len, FeatureMap features) {
  return RewardModel(std::move(vocab), max_len, features, RewardArch::Linear, 0);
}

RewardModel RewardModel::tiny_neural(Vocab vocab, int max_len, FeatureMap features, int hidden, std::uint64_t seed,
                                     double init_std) {
  RewardModel m(std::move(vocab), max_len, features, RewardArch::TinyNeural, hidden);
  Rng rng(derive_seed(seed, 0x726577ULL));
  std::normal_distribution<double> normal(0.0, init_std);
  const auto h = static_cast<std::size_t>(hidden);
  const std::size_t d = m.feature_dim();
  for (std::size_t i = 0; i < h * d; ++i) m.params_[i] = normal(rng);
  for (std::size_t i = 0; i < h; ++i) m.params_[h * d + h + i] = normal(rng);
  return m;
}

std::size_t RewardModel::feature_dim() const noexcept {
  return features_ == FeatureMap::Handcrafted ? kHandcraftedFeatureDim : kHandcraftedFeatureDim + kHashBuckets;
}

std::vector<double> RewardModel::features(const Prompt& prompt, const TokenSeq& seq) const {
  validate(vocab_, seq, max_len_);
  return features_ == FeatureMap::Handcrafted ? handcrafted_features(vocab_, prompt, seq, max_len_)
                                              : expressive_features(vocab_, prompt, seq, max_len_);
}

double RewardModel::raw(const Prompt& prompt, const TokenSeq& seq) const {
  const auto phi = features(prompt, seq);
  const std::size_t d = phi.size();
  if (arch_ == RewardArch::Linear) return std::inner_product(phi.begin(), phi.end(), params_.begin(), 0.0);
  const auto h = static_cast<std::size_t>(hidden_);
  const double* w1 = params_.data();
  const double* b1 = w1 + h * d;
  const double* w2 = b1 + h;
  double r = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    double a = b1[i];
    for (std::size_t j = 0; j < d; ++j)
      if (phi[j] != 0.0) a += w1[i * d + j] * phi[j];
    r += w2[i] * std::tanh(a);
  }
  return r;
}

double RewardModel::operator()(const Prompt& prompt, const TokenSeq& seq) const {
  const double r = raw(prompt, seq);
  return norm_.enabled ? (r - norm_.mean) / norm_.std : r;
}

void RewardModel::accumulate_grad(const Prompt& prompt, const TokenSeq& seq, double scale,
                                  std::span<double> grad) const {
  if (grad.size() != params_.size()) throw ConfigError("gradient buffer does not match parameter count");
  const auto phi = features(prompt, seq);
  const std::size_t d = phi.size();
  if (arch_ == RewardArch::Linear) {
    for (std::size_t j = 0; j < d; ++j) grad[j] += scale * phi[j];
    return;
  }
  const auto h = static_cast<std::size_t>(hidden_);
  const double* w1 = params_.data();
  const double* b1 = w1 + h * d;
  const double* w2 = b1 + h;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + h * d;
  double* g_w2 = g_b1 + h;
  for (std::size_t i = 0; i < h; ++i) {
    double a = b1[i];
    for (std::size_t j = 0; j < d; ++j)
      if (phi[j] != 0.0) a += w1[i * d + j] * phi[j];
    const double t = std::tanh(a);
    g_w2[i] += scale * t;
    const double da = scale * w2[i] * (1.0 - t * t);
    g_b1[i] += da;
    for (std::size_t j = 0; j < d; ++j)
      if (phi[j] != 0.0) g_w1[i * d + j] += da * phi[j];
  }
}

double reward(const RewardModel& model, const Prompt& prompt, const TokenSeq& completion) {
  return model(prompt, completion);
}

double bt_prob(double r_w, double r_l) { return sigmoid(r_w - r_l); }

double MarginTable::margin(Degree d) const {
  switch (d) {
    case Degree::MuchBetter: return much_better;
    case Degree::Better: return better;
    case Degree::SlightlyBetter: return slightly_better;
    case Degree::NegligiblyBetter: return negligibly_better;
    case Degree::Skipped: break;
  }
  throw RejectedInputError("Skipped pairs have no margin");
}

void MarginTable::validate() const {
  if (!(much_better >= better && better >= slightly_better && slightly_better >= negligibly_better &&
        negligibly_better >= 0.0))
    throw ConfigError("margins must be nonnegative and ordered by degree");
}

double reward_pair_loss(const RewardModel& model, const PreferencePair& pair, double margin) {
  const double d = model.raw(pair.prompt, pair.chosen) - model.raw(pair.prompt, pair.rejected) - margin;
  return -log_sigmoid(d);
}

double reward_loss(const RewardModel& model, std::span<const PreferencePair> pairs, const MarginTable* margins) {
  if (pairs.empty()) throw EmptyDatasetError("reward loss over an empty set");
  double total = 0.0;
  for (const auto& p : pairs) {
    if (p.degree == Degree::Skipped) throw RejectedInputError("Skipped pair passed to the reward loss");
    total += reward_pair_loss(model, p, margins ? margins->margin(p.degree) : 0.0);
  }
  return total / static_cast<double>(pairs.size());
}

std::vector<double> reward_loss_grad(const RewardModel& model, std::span<const PreferencePair> pairs,
                                     const MarginTable* margins) {
  if (pairs.empty()) throw EmptyDatasetError("reward gradient over an empty set");
  std::vector<double> g(model.params().size(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(pairs.size());
  for (const auto& p : pairs) {
    if (p.degree == Degree::Skipped) throw RejectedInputError("Skipped pair passed to the reward loss");
    const double m = margins ? margins->margin(p.degree) : 0.0;
    const double d = model.raw(p.prompt, p.chosen) - model.raw(p.prompt, p.rejected) - m;
    // d/dd [-log sigma(d)] = -sigma(-d)
    const double coef = -sigmoid(-d) * inv_n;
    model.accumulate_grad(p.prompt, p.chosen, coef, g);
    model.accumulate_grad(p.prompt, p.rejected, -coef, g);
  }
  return g;
}

double reward_accuracy(const RewardModel& model, std::span<const PreferencePair> pairs) {
  if (pairs.empty()) return 0.0;
  std::size_t ok = 0;
  for (const auto& p : pairs) ok += model.raw(p.prompt, p.chosen) > model.raw(p.prompt, p.rejected) ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

namespace {

RewardModel::Normalization fit_normalization(const RewardModel& m, std::span<const PreferencePair> pairs) {
  std::vector<double> rs;
  rs.reserve(2 * pairs.size());
  for (const auto& p : pairs) {
    rs.push_back(m.raw(p.prompt, p.chosen));
    rs.push_back(m.raw(p.prompt, p.rejected));
  }
  RewardModel::Normalization n;
  n.enabled = true;
  n.mean = mean(rs);
  n.std = stddev(rs);
  if (!(n.std > 1e-12)) n.std = 1.0;
  return n;
}

}  // namespace

RewardTrainResult train_reward(RewardModel init, const PrefDataset& train, const PrefDataset& val,
                               const RewardTrainConfig& cfg) {
  const auto train_pairs = training_pairs(train).pairs;
  const auto val_pairs = training_pairs(val).pairs;
  if (train_pairs.empty()) throw EmptyDatasetError("reward training set is empty after dropping Skipped");
  if (val_pairs.empty()) throw EmptyDatasetError("reward validation set is empty after dropping Skipped");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  cfg.margins.validate();
  const MarginTable* margins = cfg.use_margins ? &cfg.margins : nullptr;

  RewardModel model = std::move(init);
  model.set_normalization({});
  Optimizer opt(cfg.optimizer);
  RewardTrainResult result{model, model, 0, {}};
  double best_val = std::numeric_limits<double>::infinity();
  const std::size_t batch = cfg.batch_size == 0 ? train_pairs.size() : cfg.batch_size;

  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  std::vector<PreferencePair> mb;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      mb.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) mb.push_back(train_pairs[order[i]]);
      auto g = reward_loss_grad(model, mb, margins);
      if (cfg.l2 > 0.0)
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += cfg.l2 * model.params()[i];
      if (!all_finite(g)) throw DivergenceError(step, "non-finite reward gradient");
      opt.step(model.mutable_params(), g);
      ++step;
    }
    RewardEpoch e;
    e.epoch = epoch;
    e.train_loss = reward_loss(model, train_pairs, margins);
    e.val_loss = reward_loss(model, val_pairs, nullptr);
    e.val_accuracy = reward_accuracy(model, val_pairs);
    if (!std::isfinite(e.train_loss) || !std::isfinite(e.val_loss))
      throw DivergenceError(step, "non-finite reward loss");
    result.log.epochs.push_back(e);
    if (e.val_loss < best_val) {
      best_val = e.val_loss;
      result.best_model = model;
      result.best_epoch = epoch;
    }
  }
  result.final_model = model;
  if (cfg.normalize) {
    result.final_model.set_normalization(fit_normalization(result.final_model, train_pairs));
    result.best_model.set_normalization(fit_normalization(result.best_model, train_pairs));
  }
  return result;
}

ScaledScores scale_scores(std::span<const double> scores, ScaleMode mode) {
  if (mode == ScaleMode::Whiten && scores.size() < 2) throw ConfigError("whitening needs at least two scores");
  ScaledScores out;
  const double m = mean(scores);
  const double s = stddev(scores);
  if (!(s > 1e-12 * std::max(1.0, std::abs(m)))) {
    out.degenerate = true;
    if (mode == ScaleMode::Whiten) out.values.assign(scores.size(), 0.0);
    else out.values.assign(scores.begin(), scores.end());
    return out;
  }
  out.values.reserve(scores.size());
  for (double x : scores) out.values.push_back(mode == ScaleMode::Whiten ? (x - m) / s : x / s);
  return out;
}

OverfitReport overfit_report(const RewardTrainLog& log, double delta, double train_threshold) {
  if (log.epochs.size() < 2) throw ConfigError("overfit report needs at least two logged epochs");
  OverfitReport r;
  r.final_train_loss = log.epochs.back().train_loss;
  r.final_val_loss = log.epochs.back().val_loss;
  r.min_val_loss = log.epochs.front().val_loss;
  r.turning_point = log.epochs.front().epoch;
  for (const auto& e : log.epochs)
    if (e.val_loss < r.min_val_loss) {
      r.min_val_loss = e.val_loss;
      r.turning_point = e.epoch;
    }
  r.generalization_gap = r.final_val_loss - r.final_train_loss;
  const bool val_rose = r.final_val_loss - r.min_val_loss > delta;
  r.overfit = val_rose && r.final_train_loss < train_threshold;
  return r;
}

json to_json_value(const RewardModel& m) {
  json j;
  j["format_version"] = 1;
  j["kind"] = "reward";
  j["arch"] = reward_arch_name(m.arch());
  j["feature_map"] = feature_map_name(m.feature_map());
  j["hidden"] = m.hidden();
  j["vocab"] = {{"tokens", m.vocab().tokens()}, {"eos", m.vocab().eos()}};
  j["max_len"] = m.max_len();
  j["normalization"] = {
      {"enabled", m.normalization().enabled}, {"mean", m.normalization().mean}, {"std", m.normalization().std}};
  j["params"] = std::vector<double>(m.params().begin(), m.params().end());
  return j;
}

RewardModel reward_model_from_json(const json& j) {
  if (j.at("format_version").get<int>() != 1) throw MigrationError("unsupported reward checkpoint format_version");
  if (j.at("kind").get<std::string>() != "reward") throw ParseError(1, "not a reward checkpoint");
  Vocab vocab(j.at("vocab").at("tokens").get<std::vector<std::string>>(), j.at("vocab").at("eos").get<int>());
  const int max_len = j.at("max_len").get<int>();
  const std::string fm = j.at("feature_map").get<std::string>();
  const FeatureMap features = fm == "handcrafted" ? FeatureMap::Handcrafted : FeatureMap::Expressive;
  const std::string arch = j.at("arch").get<std::string>();
  RewardModel m = arch == "linear" ? RewardModel::linear(vocab, max_len, features)
                                   : RewardModel::tiny_neural(vocab, max_len, features, j.at("hidden").get<int>(), 0);
  const auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != m.params().size()) throw ParseError(1, "reward parameter count does not match shape");
  std::copy(params.begin(), params.end(), m.mutable_params().begin());
  const auto& n = j.at("normalization");
  m.set_normalization({n.at("enabled").get<bool>(), n.at("mean").get<double>(), n.at("std").get<double>()});
  return m;
}

void save_reward_model(const RewardModel& model, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << to_json_value(model).dump() << '\n';
}

RewardModel load_reward_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("reward checkpoint: ") + e.what());
  }
  return reward_model_from_json(j);
}

}  // namespace preflab
