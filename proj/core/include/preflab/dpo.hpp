#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "preflab/optim.hpp"
#include "preflab/policy.hpp"
#include "preflab/pref_data.hpp"

namespace preflab {

enum class DpoVariant { Sigmoid, Ipo, Hinge, KtoPair };

const char* dpo_variant_name(DpoVariant v);
/// Accepts sigmoid, ipo, hinge, kto-pair. Throws ConfigError otherwise.
DpoVariant dpo_variant_from_name(const std::string& name);

struct DpoConfig {
  double beta = 0.1;
  DpoVariant variant = DpoVariant::Sigmoid;
  double label_smoothing = 0.0;
  /// Reference point z0 of the paired KTO loss.
  double kto_reference = 0.0;
  /// Overrides the IPO target 1/(2 beta). Only used to inject faults in
  /// verification runs.
  std::optional<double> ipo_target;

  /// beta > 0, label_smoothing in [0, 0.5).
  void validate() const;
  double ipo_goal() const { return ipo_target.value_or(1.0 / (2.0 * beta)); }
};

/// beta * (log pi(y|x) - log pi_ref(y|x)).
double implicit_reward(const Policy& policy, const Policy& ref, const Prompt& prompt, const TokenSeq& completion,
                       double beta);

/// h = implicit reward of chosen minus implicit reward of rejected.
double pair_logit(const Policy& policy, const Policy& ref, const PreferencePair& pair, double beta);

/// sigma(-h): large when the implicit reward orders the pair wrongly.
double pair_weight(const Policy& policy, const Policy& ref, const PreferencePair& pair, double beta);

/// Loss of a single pair from its per-completion implicit rewards.
double dpo_pair_loss(double reward_chosen, double reward_rejected, const DpoConfig& cfg);

struct DpoLoss {
  double loss = 0.0;
  std::vector<double> per_pair;
};

DpoLoss dpo_loss(std::span<const PreferencePair> batch, const Policy& policy, const Policy& ref,
                 const DpoConfig& cfg);

/// Analytic gradient of dpo_loss with respect to policy.params(). Tabular
/// contexts on every pair must already be materialized (see materialize_pairs).
std::vector<double> dpo_grad(std::span<const PreferencePair> batch, const Policy& policy, const Policy& ref,
                             const DpoConfig& cfg);

/// Gives every context visited by a chosen or rejected completion its own
/// parameter row (tabular policies only).
void materialize_pairs(Policy& policy, std::span<const PreferencePair> pairs);

struct DpoTrainConfig {
  int epochs = 20;
  std::size_t batch_size = 64;
  /// Sgd or Momentum; Adam is refused so gradients stay exactly checkable.
  OptimizerConfig optimizer{OptimizerKind::Momentum, 0.5};
  std::uint64_t seed = 0;
  /// Also emit one record per optimizer step (otherwise per epoch only).
  bool log_steps = false;
};

struct DpoLogEntry {
  std::size_t step = 0;
  int epoch = 0;
  double loss = 0.0;
  /// Set on epoch records only.
  std::optional<double> val_loss;
  double mean_h = 0.0;
  std::optional<double> val_mean_h;
  std::optional<double> val_accuracy;  // fraction of pairs with h > 0
};

struct DpoTrainResult {
  Policy final_policy;
  Policy best_policy;  // lowest validation loss
  int best_epoch = 0;
  std::vector<DpoLogEntry> log;
};

/// Minibatch descent with seeded shuffling. Skipped pairs are dropped.
/// Throws DivergenceError on a non-finite loss.
DpoTrainResult train_dpo(Policy init, const Policy& ref, const PrefDataset& train, const PrefDataset& val,
                         const DpoConfig& cfg, const DpoTrainConfig& train_cfg);

nlohmann::ordered_json to_json(const DpoLogEntry& e);

}  // namespace preflab
