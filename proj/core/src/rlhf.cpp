#include "preflab/rlhf.hpp"

#include <algorithm>
#include <cmath>

#include "preflab/error.hpp"
#include "preflab/hash.hpp"
#include "preflab/numeric.hpp"
#include "preflab/random.hpp"

namespace preflab {

// ---------------------------------------------------------------------------
// ValueModel

ValueModel::ValueModel(Vocab vocab, int max_len, std::uint64_t seed, double init_std)
    : vocab_(std::move(vocab)), max_len_(max_len) {
  if (max_len_ < 1) throw ConfigError("max_len must be >= 1");
  params_.assign(feature_dim() + 1, 0.0);
  Rng rng(derive_seed(seed, 0x76616cULL));
  std::normal_distribution<double> normal(0.0, init_std);
  for (std::size_t i = 0; i + 1 < params_.size(); ++i) params_[i] = normal(rng);
}

std::size_t ValueModel::feature_dim() const noexcept {
  return static_cast<std::size_t>(NeuralModel::kPromptDim + max_len_ + vocab_.size() + 1) + kContextBuckets;
}

void ValueModel::features(const Prompt& prompt, std::span<const int> prefix, std::vector<double>& phi) const {
  phi.assign(feature_dim(), 0.0);
  const auto pf = prompt_features(prompt.spec);
  std::copy(pf.begin(), pf.end(), phi.begin());
  std::size_t o = pf.size();
  phi[o + prefix.size()] = 1.0;
  o += static_cast<std::size_t>(max_len_);
  const int prev = prefix.empty() ? vocab_.size() : prefix.back();
  phi[o + static_cast<std::size_t>(prev)] = 1.0;
  o += static_cast<std::size_t>(vocab_.size() + 1);
  phi[o + fnv1a(TabularModel::context_key(prompt.id, prefix)) % kContextBuckets] = 1.0;
}

std::vector<double> ValueModel::values(const Prompt& prompt, const TokenSeq& completion) const {
  validate(vocab_, completion, max_len_);
  std::vector<double> out(completion.size());
  std::vector<double> phi;
  const double bias = params_.back();
  for (std::size_t t = 0; t < completion.size(); ++t) {
    features(prompt, std::span<const int>(completion.tokens.data(), t), phi);
    double v = bias;
    for (std::size_t j = 0; j < phi.size(); ++j)
      if (phi[j] != 0.0) v += params_[j] * phi[j];
    out[t] = v;
  }
  return out;
}

void ValueModel::accumulate_grad(const Prompt& prompt, const TokenSeq& completion, std::span<const double> dvalues,
                                 std::span<double> grad) const {
  if (dvalues.size() != completion.size()) throw InvalidSequenceError("value gradient length mismatch");
  if (grad.size() != params_.size()) throw ConfigError("gradient buffer does not match value parameters");
  std::vector<double> phi;
  for (std::size_t t = 0; t < completion.size(); ++t) {
    features(prompt, std::span<const int>(completion.tokens.data(), t), phi);
    for (std::size_t j = 0; j < phi.size(); ++j)
      if (phi[j] != 0.0) grad[j] += dvalues[t] * phi[j];
    grad.back() += dvalues[t];
  }
}

// ---------------------------------------------------------------------------
// Shaping and advantages

std::vector<double> shaped_rewards(const Policy& policy, const Policy& ref, double terminal_reward,
                                   const Prompt& prompt, const TokenSeq& completion, double beta) {
  if (completion.size() == 0) throw InvalidSequenceError("cannot shape an empty completion");
  const auto lp = per_token_logprobs(policy, prompt, completion);
  const auto lr = per_token_logprobs(ref, prompt, completion);
  if (lp.size() != lr.size() || lp.size() != completion.size())
    throw InvalidSequenceError("policy and reference scored different lengths");
  std::vector<double> out(lp.size());
  for (std::size_t t = 0; t < lp.size(); ++t) out[t] = -beta * (lp[t] - lr[t]);
  out.back() += terminal_reward;
  return out;
}

std::vector<double> shaped_rewards(const Policy& policy, const Policy& ref, const RewardFn& reward,
                                   const Prompt& prompt, const TokenSeq& completion, double beta) {
  return shaped_rewards(policy, ref, reward(prompt, completion), prompt, completion, beta);
}

std::vector<double> returns_to_go(std::span<const double> shaped) {
  std::vector<double> g(shaped.size());
  double acc = 0.0;
  for (std::size_t i = shaped.size(); i-- > 0;) {
    acc += shaped[i];
    g[i] = acc;
  }
  return g;
}

Advantages batch_advantages(std::span<const std::vector<double>> values,
                            std::span<const std::vector<double>> shaped, bool whiten) {
  if (values.size() != shaped.size()) throw InvalidSequenceError("values and rewards differ in batch size");
  Advantages out;
  std::vector<double> flat;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].size() != shaped[i].size()) throw InvalidSequenceError("values and rewards differ in length");
    auto g = returns_to_go(shaped[i]);
    for (std::size_t t = 0; t < g.size(); ++t) g[t] -= values[i][t];
    flat.insert(flat.end(), g.begin(), g.end());
    out.values.push_back(std::move(g));
  }
  if (!whiten) return out;
  if (flat.size() < 2) {
    out.whitening_skipped = true;
    return out;
  }
  const double m = mean(flat);
  const double s = stddev(flat);
  if (!(s > 1e-12 * std::max(1.0, std::abs(m)))) {
    out.whitening_skipped = true;
    return out;
  }
  for (auto& a : out.values)
    for (double& x : a) x = (x - m) / s;
  return out;
}

std::vector<double> advantages(std::span<const double> values, std::span<const double> shaped, bool whiten) {
  std::vector<std::vector<double>> v{{values.begin(), values.end()}};
  std::vector<std::vector<double>> r{{shaped.begin(), shaped.end()}};
  return std::move(batch_advantages(v, r, whiten).values.front());
}

// ---------------------------------------------------------------------------
// KL control

const char* kl_mode_name(KlMode m) { return m == KlMode::Fixed ? "fixed" : "adaptive"; }

KlMode kl_mode_from_name(const std::string& name) {
  if (name == "fixed") return KlMode::Fixed;
  if (name == "adaptive") return KlMode::Adaptive;
  throw ConfigError("unknown kl mode '" + name + "'");
}

double kl_controller(KlMode mode, double current_kl, double target_kl, double beta) {
  if (!(beta > 0.0)) throw ConfigError("kl coefficient must be positive");
  if (mode == KlMode::Fixed) return beta;
  if (!(target_kl > 0.0)) throw ConfigError("target kl must be positive");
  const double ratio = std::isfinite(current_kl) ? current_kl / target_kl : kKlFactorMax;
  return beta * std::clamp(ratio, kKlFactorMin, kKlFactorMax);
}

const char* reward_scaling_name(RewardScaling s) {
  switch (s) {
    case RewardScaling::None: return "none";
    case RewardScaling::Whiten: return "whiten";
    case RewardScaling::ScaleOnly: return "scale-only";
  }
  return "?";
}

RewardScaling reward_scaling_from_name(const std::string& name) {
  for (auto s : {RewardScaling::None, RewardScaling::Whiten, RewardScaling::ScaleOnly})
    if (name == reward_scaling_name(s)) return s;
  throw ConfigError("unknown reward scaling '" + name + "'");
}

void RlhfConfig::validate() const {
  if (!(kl_coeff > 0.0)) throw ConfigError("kl_coeff must be positive");
  if (batch_prompts == 0) throw ConfigError("batch_prompts must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (!(clip_ratio > 0.0)) throw ConfigError("clip_ratio must be positive");
  if (ppo_epochs < 1) throw ConfigError("ppo_epochs must be >= 1");
  if (!(value_loss_weight >= 0.0)) throw ConfigError("value_loss_weight must be nonnegative");
  if (!(lr_final_fraction > 0.0 && lr_final_fraction <= 1.0)) throw ConfigError("lr_final_fraction must be in (0, 1]");
  if (kl_mode == KlMode::Adaptive && !(target_kl > 0.0)) throw ConfigError("target_kl must be positive");
}

// ---------------------------------------------------------------------------
// Trainer

RlhfTrainer::RlhfTrainer(Policy policy, Policy ref, RewardFn reward, RlhfConfig cfg)
    : policy_(std::move(policy)),
      ref_(std::move(ref)),
      reward_(std::move(reward)),
      cfg_(cfg),
      value_(policy_.vocab(), policy_.max_len(), derive_seed(cfg.seed, 0x76ULL)),
      policy_opt_(cfg.policy_optimizer),
      value_opt_(cfg.value_optimizer),
      beta_(cfg.kl_coeff) {
  cfg_.validate();
  if (!(policy_.vocab() == ref_.vocab()) || policy_.max_len() != ref_.max_len())
    throw ConfigError("policy and reference disagree on vocab or max length");
  if (!reward_) throw ConfigError("missing reward function");
}

namespace {

// grad += sum_t coef[t] * d log pi(y_t | ctx_t) / d params
void accumulate_token_grads(const Policy& policy, const Prompt& prompt, const TokenSeq& y,
                            std::span<const double> coef, std::span<double> grad) {
  const auto v = static_cast<std::size_t>(policy.vocab().size());
  std::vector<double> logits(v), dlogits(v);
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (coef[t] == 0.0) continue;
    const std::span<const int> prefix(y.tokens.data(), t);
    policy.logits(prompt, prefix, logits);
    const auto p = softmax(logits);
    for (std::size_t k = 0; k < v; ++k) dlogits[k] = -coef[t] * p[k];
    dlogits[static_cast<std::size_t>(y.tokens[t])] += coef[t];
    policy.backprop_logits(prompt, prefix, dlogits, grad);
  }
}

}  // namespace

StepResult RlhfTrainer::step(std::span<const Prompt> prompts) {
  if (prompts.empty()) throw ConfigError("rlhf step needs at least one prompt");
  const std::size_t n = prompts.size();
  StepResult result;
  StepStats& st = result.stats;
  st.step = step_;
  st.beta = beta_;

  // Sample and score.
  std::vector<TokenSeq> ys(n);
  std::vector<double> raw_rewards(n);
  SampleOptions opts{cfg_.temperature, false};
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(cfg_.seed, step_ + 1, i));
    ys[i] = sample(policy_, prompts[i], opts, rng);
    raw_rewards[i] = reward_(prompts[i], ys[i]);
    if (!std::isfinite(raw_rewards[i])) throw DivergenceError(step_, "non-finite reward", prompts[i].id);
  }
  std::vector<double> rewards = raw_rewards;
  if (cfg_.reward_scaling != RewardScaling::None && n >= 2) {
    const auto mode = cfg_.reward_scaling == RewardScaling::Whiten ? ScaleMode::Whiten : ScaleMode::ScaleOnly;
    rewards = scale_scores(raw_rewards, mode).values;
  }

  // Shaped rewards, old log-probs, values.
  std::vector<std::vector<double>> shaped(n), values(n), old_lp(n), rets(n);
  std::size_t tokens = 0;
  double kl_tokens = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    policy_.materialize(prompts[i], ys[i]);
    old_lp[i] = per_token_logprobs(policy_, prompts[i], ys[i]);
    const auto ref_lp = per_token_logprobs(ref_, prompts[i], ys[i]);
    shaped[i].resize(ys[i].size());
    double kl = 0.0;
    for (std::size_t t = 0; t < ys[i].size(); ++t) {
      const double d = old_lp[i][t] - ref_lp[t];
      kl += d;
      shaped[i][t] = -beta_ * d;
    }
    shaped[i].back() += rewards[i];
    values[i] = value_.values(prompts[i], ys[i]);
    rets[i] = returns_to_go(shaped[i]);
    tokens += ys[i].size();
    kl_tokens += kl;
    if (!std::isfinite(kl) || !all_finite(values[i]))
      throw DivergenceError(step_, "non-finite kl or value", prompts[i].id);
    result.samples.push_back({prompts[i].id, ys[i], raw_rewards[i], kl, ref_lp});
    st.mean_kl += kl / static_cast<double>(n);
    st.mean_reward += raw_rewards[i] / static_cast<double>(n);
    st.mean_length += static_cast<double>(ys[i].size()) / static_cast<double>(n);
  }
  st.mean_kl_per_token = kl_tokens / static_cast<double>(tokens);

  const auto adv = batch_advantages(values, shaped, cfg_.whiten_advantages);
  st.whitening_skipped = adv.whitening_skipped;

  // Clipped policy update.
  const double inv_tok = 1.0 / static_cast<double>(tokens);
  std::size_t clipped = 0;
  for (int epoch = 0; epoch < cfg_.ppo_epochs; ++epoch) {
    std::vector<double> grad(policy_.num_params(), 0.0);
    double loss = 0.0;
    clipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto lp = epoch == 0 ? old_lp[i] : per_token_logprobs(policy_, prompts[i], ys[i]);
      std::vector<double> coef(lp.size(), 0.0);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        const double a = adv.values[i][t];
        const double ratio = std::exp(lp[t] - old_lp[i][t]);
        const double clipped_ratio = std::clamp(ratio, 1.0 - cfg_.clip_ratio, 1.0 + cfg_.clip_ratio);
        const double unclipped_obj = ratio * a;
        const double clipped_obj = clipped_ratio * a;
        loss -= std::min(unclipped_obj, clipped_obj) * inv_tok;
        if (clipped_obj < unclipped_obj) {
          ++clipped;
        } else {
          // d(-ratio * a)/d lp = -ratio * a; descent on the loss.
          coef[t] = -ratio * a * inv_tok;
        }
      }
      // grad is of the loss: d loss / d theta = sum coef * d lp / d theta
      accumulate_token_grads(policy_, prompts[i], ys[i], coef, grad);
    }
    if (!std::isfinite(loss) || !all_finite(grad)) throw DivergenceError(step_, "non-finite policy gradient");
    if (epoch == 0) st.policy_loss = loss;
    st.update_norm += policy_opt_.step(policy_.mutable_params(), grad);
  }
  st.clip_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);

  // Value regression on undiscounted returns.
  std::vector<double> vgrad(value_.params().size(), 0.0);
  double vloss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> dv(values[i].size());
    for (std::size_t t = 0; t < dv.size(); ++t) {
      const double e = values[i][t] - rets[i][t];
      vloss += e * e * inv_tok;
      dv[t] = 2.0 * cfg_.value_loss_weight * e * inv_tok;
    }
    value_.accumulate_grad(prompts[i], ys[i], dv, vgrad);
  }
  if (!std::isfinite(vloss)) throw DivergenceError(step_, "non-finite value loss");
  st.value_loss = vloss;
  if (cfg_.value_loss_weight > 0.0) value_opt_.step(value_.mutable_params(), vgrad);

  beta_ = kl_controller(cfg_.kl_mode, st.mean_kl, cfg_.target_kl, beta_);
  ++step_;
  return result;
}

std::vector<Prompt> RlhfTrainer::draw_prompts(std::span<const Prompt> pool, std::size_t index) const {
  if (pool.empty()) throw ConfigError("empty prompt pool");
  Rng rng(derive_seed(cfg_.seed, 0x70726dULL, index));
  std::vector<Prompt> out;
  out.reserve(cfg_.batch_prompts);
  for (std::size_t i = 0; i < cfg_.batch_prompts; ++i) {
    auto k = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool.size()));
    out.push_back(pool[std::min(k, pool.size() - 1)]);
  }
  return out;
}

void RlhfTrainer::train(std::span<const Prompt> pool, const std::function<void(const StepResult&)>& on_step) {
  const double p0 = cfg_.policy_optimizer.lr;
  const double v0 = cfg_.value_optimizer.lr;
  const auto total = static_cast<double>(std::max<std::size_t>(cfg_.steps, 1));
  for (std::size_t s = 0; s < cfg_.steps; ++s) {
    const double frac = 1.0 - (1.0 - cfg_.lr_final_fraction) * static_cast<double>(s) / total;
    policy_opt_.set_lr(p0 * frac);
    value_opt_.set_lr(v0 * frac);
    const auto prompts = draw_prompts(pool, step_);
    const auto r = step(prompts);
    if (on_step) on_step(r);
  }
}

nlohmann::ordered_json to_json(const StepStats& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["mean_reward"] = s.mean_reward;
  j["mean_kl"] = s.mean_kl;
  j["mean_kl_per_token"] = s.mean_kl_per_token;
  j["value_loss"] = s.value_loss;
  j["policy_loss"] = s.policy_loss;
  j["update_norm"] = s.update_norm;
  j["beta"] = s.beta;
  j["mean_length"] = s.mean_length;
  j["clip_fraction"] = s.clip_fraction;
  if (s.whitening_skipped) j["whitening_skipped"] = true;
  return j;
}

// ---------------------------------------------------------------------------
// Spike monitor

namespace {

double median_of(const std::deque<double>& xs) {
  std::vector<double> v(xs.begin(), xs.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    m = 0.5 * (m + lo);
  }
  return m;
}

}  // namespace

SpikeMonitor::SpikeMonitor(SpikeThresholds t) : t_(t) {
  if (!(t_.kl_factor > 1.0) || !(t_.reward_factor > 1.0)) throw ConfigError("spike factors must exceed 1");
  if (t_.window == 0 || t_.min_history == 0 || t_.min_history > t_.window)
    throw ConfigError("spike window must satisfy 0 < min_history <= window");
}

std::vector<SpikeAlert> SpikeMonitor::observe(const StepStats& stats, std::span<const SampleRecord> samples) {
  std::vector<SpikeAlert> out;
  auto check = [&](std::deque<double>& hist, double value, double factor, double floor, const char* metric) {
    if (hist.size() >= t_.min_history) {
      const double med = median_of(hist);
      if (!std::isfinite(value) || value > factor * std::max(std::abs(med), floor)) {
        SpikeAlert a{stats.step, metric, value, med, {}};
        std::vector<SampleRecord> s(samples.begin(), samples.end());
        std::stable_sort(s.begin(), s.end(), [](const auto& x, const auto& y) { return x.kl > y.kl; });
        if (s.size() > t_.dump) s.resize(t_.dump);
        a.offenders = std::move(s);
        out.push_back(std::move(a));
      }
    }
    hist.push_back(value);
    if (hist.size() > t_.window) hist.pop_front();
  };
  check(kl_, stats.mean_kl_per_token, t_.kl_factor, t_.kl_floor, "kl");
  check(reward_, stats.mean_reward, t_.reward_factor, t_.reward_floor, "reward");
  alerts_.insert(alerts_.end(), out.begin(), out.end());
  return out;
}

std::vector<SpikeAlert> spike_monitor(std::span<const StepStats> stream, const SpikeThresholds& t) {
  SpikeMonitor m(t);
  for (const auto& s : stream) m.observe(s);
  return m.alerts();
}

nlohmann::ordered_json to_json(const SpikeAlert& a, const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["step"] = a.step;
  j["metric"] = a.metric;
  j["value"] = a.value;
  j["trailing_median"] = a.trailing_median;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : a.offenders) {
    nlohmann::ordered_json o;
    o["prompt_id"] = s.prompt_id;
    o["completion"] = token_names(vocab, s.completion);
    o["reward"] = s.reward;
    o["kl"] = s.kl;
    o["ref_token_logprobs"] = s.ref_token_logprobs;
    arr.push_back(std::move(o));
  }
  j["offenders"] = std::move(arr);
  return j;
}

}  // namespace preflab
