#include "preflab/dpo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "preflab/error.hpp"
#include "preflab/numeric.hpp"
#include "preflab/random.hpp"

namespace preflab {

const char* dpo_variant_name(DpoVariant v) {
  switch (v) {
    case DpoVariant::Sigmoid: return "sigmoid";
    case DpoVariant::Ipo: return "ipo";
    case DpoVariant::Hinge: return "hinge";
    case DpoVariant::KtoPair: return "kto-pair";
  }
  return "?";
}

DpoVariant dpo_variant_from_name(const std::string& name) {
  for (DpoVariant v : {DpoVariant::Sigmoid, DpoVariant::Ipo, DpoVariant::Hinge, DpoVariant::KtoPair})
    if (name == dpo_variant_name(v)) return v;
  if (name == "kto_pair") return DpoVariant::KtoPair;
  throw ConfigError("unknown DPO variant '" + name + "'");
}

void DpoConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("beta must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 0.5)) throw ConfigError("label_smoothing must be in [0, 0.5)");
}

double implicit_reward(const Policy& policy, const Policy& ref, const Prompt& prompt, const TokenSeq& completion,
                       double beta) {
  if (!(policy.vocab() == ref.vocab()) || policy.max_len() != ref.max_len())
    throw ConfigError("policy and reference disagree on vocab or max length");
  return beta * (logprob(policy, prompt, completion) - logprob(ref, prompt, completion));
}

namespace {

void require_labelled(const PreferencePair& pair) {
  if (pair.degree == Degree::Skipped) throw RejectedInputError("Skipped pair for prompt " + pair.prompt.id);
}

struct PairTerms {
  double rw = 0.0;  // implicit reward of chosen
  double rl = 0.0;  // implicit reward of rejected
};

PairTerms pair_terms(const Policy& policy, const Policy& ref, const PreferencePair& pair, double beta) {
  require_labelled(pair);
  return {implicit_reward(policy, ref, pair.prompt, pair.chosen, beta),
          implicit_reward(policy, ref, pair.prompt, pair.rejected, beta)};
}

// dL/d rw and dL/d rl.
std::pair<double, double> pair_loss_grad(double rw, double rl, const DpoConfig& cfg) {
  const double h = rw - rl;
  double dh = 0.0;
  switch (cfg.variant) {
    case DpoVariant::Sigmoid:
      dh = -(1.0 - cfg.label_smoothing) * sigmoid(-h) + cfg.label_smoothing * sigmoid(h);
      break;
    case DpoVariant::Ipo:
      dh = 2.0 * (h - cfg.ipo_goal());
      break;
    case DpoVariant::Hinge:
      dh = h < 1.0 ? -1.0 : 0.0;
      break;
    case DpoVariant::KtoPair: {
      const double sw = sigmoid(rw - cfg.kto_reference);
      const double sl = sigmoid(cfg.kto_reference - rl);
      return {-sw * (1.0 - sw), sl * (1.0 - sl)};
    }
  }
  return {dh, -dh};
}

}  // namespace

double pair_logit(const Policy& policy, const Policy& ref, const PreferencePair& pair, double beta) {
  const auto t = pair_terms(policy, ref, pair, beta);
  return t.rw - t.rl;
}

double pair_weight(const Policy& policy, const Policy& ref, const PreferencePair& pair, double beta) {
  return sigmoid(-pair_logit(policy, ref, pair, beta));
}

double dpo_pair_loss(double rw, double rl, const DpoConfig& cfg) {
  const double h = rw - rl;
  switch (cfg.variant) {
    case DpoVariant::Sigmoid:
      return -(1.0 - cfg.label_smoothing) * log_sigmoid(h) - cfg.label_smoothing * log_sigmoid(-h);
    case DpoVariant::Ipo: {
      const double d = h - cfg.ipo_goal();
      return d * d;
    }
    case DpoVariant::Hinge:
      return std::max(0.0, 1.0 - h);
    case DpoVariant::KtoPair:
      return (1.0 - sigmoid(rw - cfg.kto_reference)) + (1.0 - sigmoid(cfg.kto_reference - rl));
  }
  throw ConfigError("unknown DPO variant");
}

DpoLoss dpo_loss(std::span<const PreferencePair> batch, const Policy& policy, const Policy& ref,
                 const DpoConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw EmptyDatasetError("DPO loss over an empty batch");
  DpoLoss out;
  out.per_pair.reserve(batch.size());
  for (const auto& pair : batch) {
    const auto t = pair_terms(policy, ref, pair, cfg.beta);
    out.per_pair.push_back(dpo_pair_loss(t.rw, t.rl, cfg));
  }
  out.loss = mean(out.per_pair);
  return out;
}

std::vector<double> dpo_grad(std::span<const PreferencePair> batch, const Policy& policy, const Policy& ref,
                             const DpoConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw EmptyDatasetError("DPO gradient over an empty batch");
  std::vector<double> grad(policy.num_params(), 0.0);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (const auto& pair : batch) {
    const auto t = pair_terms(policy, ref, pair, cfg.beta);
    const auto [gw, gl] = pair_loss_grad(t.rw, t.rl, cfg);
    // d rw / d theta = beta * grad log pi(chosen)
    if (gw != 0.0) accumulate_grad_logprob(policy, pair.prompt, pair.chosen, cfg.beta * gw * inv_n, grad);
    if (gl != 0.0) accumulate_grad_logprob(policy, pair.prompt, pair.rejected, cfg.beta * gl * inv_n, grad);
  }
  return grad;
}

void materialize_pairs(Policy& policy, std::span<const PreferencePair> pairs) {
  if (policy.kind() != PolicyKind::Tabular) return;
  for (const auto& p : pairs) {
    policy.materialize(p.prompt, p.chosen);
    policy.materialize(p.prompt, p.rejected);
  }
}

namespace {

struct ValStats {
  double loss = 0.0;
  double mean_h = 0.0;
  double accuracy = 0.0;
};

ValStats evaluate_pairs(std::span<const PreferencePair> pairs, const Policy& policy, const Policy& ref,
                        const DpoConfig& cfg) {
  ValStats s;
  std::size_t correct = 0;
  for (const auto& pair : pairs) {
    const auto t = pair_terms(policy, ref, pair, cfg.beta);
    s.loss += dpo_pair_loss(t.rw, t.rl, cfg);
    s.mean_h += t.rw - t.rl;
    correct += t.rw - t.rl > 0.0 ? 1 : 0;
  }
  const double n = static_cast<double>(pairs.size());
  s.loss /= n;
  s.mean_h /= n;
  s.accuracy = static_cast<double>(correct) / n;
  return s;
}

}  // namespace

DpoTrainResult train_dpo(Policy init, const Policy& ref, const PrefDataset& train, const PrefDataset& val,
                         const DpoConfig& cfg, const DpoTrainConfig& train_cfg) {
  cfg.validate();
  if (train_cfg.optimizer.kind == OptimizerKind::Adam)
    throw ConfigError("DPO training uses sgd or momentum; adam is not supported");
  if (train_cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  const auto train_pairs = training_pairs(train).pairs;
  const auto val_pairs = training_pairs(val).pairs;
  if (train_pairs.empty()) throw EmptyDatasetError("DPO training set is empty after dropping Skipped");
  if (val_pairs.empty()) throw EmptyDatasetError("DPO validation set is empty after dropping Skipped");

  Policy policy = std::move(init);
  materialize_pairs(policy, train_pairs);
  materialize_pairs(policy, val_pairs);

  Optimizer opt(train_cfg.optimizer);
  DpoTrainResult result{policy, policy, 0, {}};
  double best_val = std::numeric_limits<double>::infinity();
  const std::size_t batch = train_cfg.batch_size == 0 ? train_pairs.size() : train_cfg.batch_size;
  std::vector<std::size_t> order(train_pairs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<PreferencePair> mb;
  std::size_t step = 0;

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    Rng rng(derive_seed(train_cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      mb.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + batch); ++i) mb.push_back(train_pairs[order[i]]);
      const auto grad = dpo_grad(mb, policy, ref, cfg);
      if (!all_finite(grad)) throw DivergenceError(step, "non-finite DPO gradient");
      if (train_cfg.log_steps) {
        const auto l = dpo_loss(mb, policy, ref, cfg);
        if (!std::isfinite(l.loss)) throw DivergenceError(step, "non-finite DPO loss");
        DpoLogEntry e;
        e.step = step;
        e.epoch = epoch;
        e.loss = l.loss;
        double hs = 0.0;
        for (const auto& p : mb) hs += pair_logit(policy, ref, p, cfg.beta);
        e.mean_h = hs / static_cast<double>(mb.size());
        result.log.push_back(e);
      }
      opt.step(policy.mutable_params(), grad);
      ++step;
    }
    const auto tr = evaluate_pairs(train_pairs, policy, ref, cfg);
    const auto va = evaluate_pairs(val_pairs, policy, ref, cfg);
    if (!std::isfinite(tr.loss) || !std::isfinite(va.loss)) throw DivergenceError(step, "non-finite DPO loss");
    DpoLogEntry e;
    e.step = step;
    e.epoch = epoch;
    e.loss = tr.loss;
    e.mean_h = tr.mean_h;
    e.val_loss = va.loss;
    e.val_mean_h = va.mean_h;
    e.val_accuracy = va.accuracy;
    result.log.push_back(e);
    if (va.loss < best_val) {
      best_val = va.loss;
      result.best_policy = policy;
      result.best_epoch = epoch;
    }
  }
  result.final_policy = std::move(policy);
  return result;
}

nlohmann::ordered_json to_json(const DpoLogEntry& e) {
  nlohmann::ordered_json j;
  j["step"] = e.step;
  j["epoch"] = e.epoch;
  j["loss"] = e.loss;
  j["val_loss"] = e.val_loss ? nlohmann::ordered_json(*e.val_loss) : nlohmann::ordered_json(nullptr);
  j["mean_h"] = e.mean_h;
  if (e.val_mean_h) j["val_mean_h"] = *e.val_mean_h;
  if (e.val_accuracy) j["val_accuracy"] = *e.val_accuracy;
  return j;
}

}  // namespace preflab
