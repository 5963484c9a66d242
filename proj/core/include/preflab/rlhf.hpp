#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "preflab/optim.hpp"
#include "preflab/oracle.hpp"
#include "preflab/policy.hpp"
#include "preflab/reward_model.hpp"

namespace preflab {

// ---------------------------------------------------------------------------
// Value model

/// Linear per-position value head over [prompt features | position one-hot |
/// previous-token one-hot | hashed context indicator]. Weights start at
/// N(0, init_std), bias at 0.
class ValueModel {
 public:
  static constexpr std::size_t kContextBuckets = 256;

  ValueModel(Vocab vocab, int max_len, std::uint64_t seed, double init_std = 0.2);

  std::size_t feature_dim() const noexcept;
  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params() noexcept { return params_; }

  /// One prediction per completion token (value of the state before it).
  std::vector<double> values(const Prompt& prompt, const TokenSeq& completion) const;

  /// grad += sum_t dvalues[t] * d values[t] / d params.
  void accumulate_grad(const Prompt& prompt, const TokenSeq& completion, std::span<const double> dvalues,
                       std::span<double> grad) const;

 private:
  void features(const Prompt& prompt, std::span<const int> prefix, std::vector<double>& phi) const;

  Vocab vocab_;
  int max_len_;
  std::vector<double> params_;  // weights then bias
};

// ---------------------------------------------------------------------------
// Shaping and advantages

/// -beta (log pi(y_t) - log pi_ref(y_t)) per token, plus `terminal_reward`
/// on the last token.
std::vector<double> shaped_rewards(const Policy& policy, const Policy& ref, double terminal_reward,
                                   const Prompt& prompt, const TokenSeq& completion, double beta);

/// Variant scoring the completion with a reward function first.
std::vector<double> shaped_rewards(const Policy& policy, const Policy& ref, const RewardFn& reward,
                                   const Prompt& prompt, const TokenSeq& completion, double beta);

/// Undiscounted reward-to-go.
std::vector<double> returns_to_go(std::span<const double> shaped);

struct Advantages {
  std::vector<std::vector<double>> values;
  /// Whitening was requested but skipped (fewer than two tokens or zero
  /// variance).
  bool whitening_skipped = false;
};

/// Return minus baseline per token; optionally whitened across the whole
/// batch.
Advantages batch_advantages(std::span<const std::vector<double>> values,
                            std::span<const std::vector<double>> shaped, bool whiten);

/// Single-sequence convenience wrapper around batch_advantages.
std::vector<double> advantages(std::span<const double> values, std::span<const double> shaped, bool whiten);

// ---------------------------------------------------------------------------
// KL control

enum class KlMode { Fixed, Adaptive };

const char* kl_mode_name(KlMode m);
KlMode kl_mode_from_name(const std::string& name);

inline constexpr double kKlFactorMin = 0.5;
inline constexpr double kKlFactorMax = 2.0;

/// Fixed: beta. Adaptive: beta * clamp(current / target, 0.5, 2).
double kl_controller(KlMode mode, double current_kl, double target_kl, double beta);

// ---------------------------------------------------------------------------
// Trainer

enum class RewardScaling { None, Whiten, ScaleOnly };

const char* reward_scaling_name(RewardScaling s);
RewardScaling reward_scaling_from_name(const std::string& name);

struct RlhfConfig {
  double kl_coeff = 0.05;
  KlMode kl_mode = KlMode::Fixed;
  double target_kl = 1.0;  // adaptive mode only, sequence-level nats
  std::size_t batch_prompts = 16;
  std::size_t steps = 200;
  double temperature = 1.0;
  bool whiten_advantages = true;
  /// Applied to the terminal rewards of each batch before shaping.
  RewardScaling reward_scaling = RewardScaling::Whiten;
  double clip_ratio = 0.2;
  /// Passes over each sampled batch; the clip only binds after the first.
  int ppo_epochs = 1;
  double value_loss_weight = 0.5;
  OptimizerConfig policy_optimizer{OptimizerKind::Adam, 0.05};
  OptimizerConfig value_optimizer{OptimizerKind::Adam, 0.05};
  /// Linear decay of both learning rates down to this fraction at the last
  /// step; 1 keeps them constant.
  double lr_final_fraction = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SampleRecord {
  std::string prompt_id;
  TokenSeq completion;
  double reward = 0.0;  // unscaled terminal reward
  double kl = 0.0;      // sum_t log pi - log pi_ref
  std::vector<double> ref_token_logprobs;
};

struct StepStats {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;            // sequence-level estimate
  double mean_kl_per_token = 0.0;  // averaged over tokens
  double value_loss = 0.0;
  double policy_loss = 0.0;
  double update_norm = 0.0;
  double beta = 0.0;
  double mean_length = 0.0;
  double clip_fraction = 0.0;
  bool whitening_skipped = false;

  friend bool operator==(const StepStats&, const StepStats&) = default;
};

struct StepResult {
  StepStats stats;
  std::vector<SampleRecord> samples;
};

/// Online clipped policy-gradient learner with a separate value model.
class RlhfTrainer {
 public:
  RlhfTrainer(Policy policy, Policy ref, RewardFn reward, RlhfConfig cfg);

  /// Samples one completion per prompt with a generator seeded from
  /// (seed, step, index), then updates policy and value.
  StepResult step(std::span<const Prompt> prompts);

  /// `cfg.steps` steps, each on `batch_prompts` prompts drawn from the pool.
  /// The callback runs after every step.
  void train(std::span<const Prompt> pool, const std::function<void(const StepResult&)>& on_step = {});

  /// Prompts used by step `index` of train().
  std::vector<Prompt> draw_prompts(std::span<const Prompt> pool, std::size_t index) const;

  const Policy& policy() const noexcept { return policy_; }
  const Policy& ref() const noexcept { return ref_; }
  const ValueModel& value() const noexcept { return value_; }
  double beta() const noexcept { return beta_; }
  std::size_t steps_done() const noexcept { return step_; }
  const RlhfConfig& config() const noexcept { return cfg_; }

 private:
  Policy policy_;
  Policy ref_;
  RewardFn reward_;
  RlhfConfig cfg_;
  ValueModel value_;
  Optimizer policy_opt_;
  Optimizer value_opt_;
  double beta_;
  std::size_t step_ = 0;
};

nlohmann::ordered_json to_json(const StepStats& s);

// ---------------------------------------------------------------------------
// Spike monitor

struct SpikeThresholds {
  /// The KL check watches per-token KL.
  double kl_factor = 10.0;
  double reward_factor = 10.0;
  /// Trailing medians are floored so a near-zero baseline does not alert on
  /// noise.
  double kl_floor = 0.05;
  double reward_floor = 1.0;
  std::size_t window = 20;
  std::size_t min_history = 5;
  /// Offending sequences reported per alert.
  std::size_t dump = 4;
};

struct SpikeAlert {
  std::size_t step = 0;
  std::string metric;  // "kl" or "reward"
  double value = 0.0;
  double trailing_median = 0.0;
  /// Samples with the largest log pi / pi_ref, most improbable under the
  /// reference first.
  std::vector<SampleRecord> offenders;
};

class SpikeMonitor {
 public:
  explicit SpikeMonitor(SpikeThresholds t = {});

  /// Alerts for this step (zero, one or two), then records the step.
  std::vector<SpikeAlert> observe(const StepStats& stats, std::span<const SampleRecord> samples = {});

  const std::vector<SpikeAlert>& alerts() const noexcept { return alerts_; }

 private:
  SpikeThresholds t_;
  std::deque<double> kl_;
  std::deque<double> reward_;
  std::vector<SpikeAlert> alerts_;
};

/// Batch form over a recorded stats stream (no sequence dumps).
std::vector<SpikeAlert> spike_monitor(std::span<const StepStats> stream, const SpikeThresholds& t = {});

nlohmann::ordered_json to_json(const SpikeAlert& a, const Vocab& vocab);

}  // namespace preflab
