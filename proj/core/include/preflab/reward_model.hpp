#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "preflab/optim.hpp"
#include "preflab/pref_data.hpp"

namespace preflab {

// ---------------------------------------------------------------------------
// Feature maps

/// Prompt-independent descriptors of a completion: per-move counts, net
/// displacement, path length, termination, distinct cells. Also the feature
/// space used by the diversity/Frechet metrics.
std::vector<double> sequence_features(const Vocab& vocab, const TokenSeq& seq, int max_len);
inline constexpr std::size_t kSequenceFeatureDim = 11;

/// sequence_features + prompt-template one-hot + prompt/path match indicators.
std::vector<double> handcrafted_features(const Vocab& vocab, const Prompt& prompt, const TokenSeq& seq, int max_len);
inline constexpr std::size_t kHandcraftedFeatureDim = kSequenceFeatureDim + 5 + 6;

/// handcrafted_features + hashed (prompt, position, token) and
/// (prompt, position, bigram) indicators. Enough capacity to memorize
/// individual completions.
std::vector<double> expressive_features(const Vocab& vocab, const Prompt& prompt, const TokenSeq& seq, int max_len);
inline constexpr std::size_t kHashBuckets = 512;

enum class FeatureMap { Handcrafted, Expressive };
enum class RewardArch {
  Linear,     // handcrafted-sequence-features: r = w . phi
  TinyNeural  // r = w2 . tanh(W1 phi + b1)
};

const char* feature_map_name(FeatureMap f);
const char* reward_arch_name(RewardArch a);

// ---------------------------------------------------------------------------
// Model

/// Scalar reward r_psi(x, y). No output bias: it cancels in every
/// pairwise difference.
class RewardModel {
 public:
  struct Normalization {
    bool enabled = false;
    double mean = 0.0;
    double std = 1.0;
  };

  static RewardModel linear(Vocab vocab, int max_len, FeatureMap features = FeatureMap::Handcrafted);
  static RewardModel tiny_neural(Vocab vocab, int max_len, FeatureMap features, int hidden, std::uint64_t seed,
                                 double init_std = 0.1);

  const Vocab& vocab() const noexcept { return vocab_; }
  int max_len() const noexcept { return max_len_; }
  FeatureMap feature_map() const noexcept { return features_; }
  RewardArch arch() const noexcept { return arch_; }
  int hidden() const noexcept { return hidden_; }
  std::size_t feature_dim() const noexcept;

  std::span<const double> params() const noexcept { return params_; }
  std::span<double> mutable_params() noexcept { return params_; }

  const Normalization& normalization() const noexcept { return norm_; }
  void set_normalization(Normalization n) { norm_ = n; }

  std::vector<double> features(const Prompt& prompt, const TokenSeq& seq) const;

  /// Unnormalized score.
  double raw(const Prompt& prompt, const TokenSeq& seq) const;
  /// raw, then (r - mean) / std when normalization is enabled.
  double operator()(const Prompt& prompt, const TokenSeq& seq) const;

  /// grad += scale * d raw / d params.
  void accumulate_grad(const Prompt& prompt, const TokenSeq& seq, double scale, std::span<double> grad) const;

 private:
  RewardModel(Vocab vocab, int max_len, FeatureMap features, RewardArch arch, int hidden);

  Vocab vocab_;
  int max_len_;
  FeatureMap features_;
  RewardArch arch_;
  int hidden_;
  std::vector<double> params_;
  Normalization norm_;
};

double reward(const RewardModel& model, const Prompt& prompt, const TokenSeq& completion);

/// sigma(r_w - r_l).
double bt_prob(double r_w, double r_l);

/// Per-degree margin subtracted inside the sigmoid.
struct MarginTable {
  double much_better = 3.0;
  double better = 2.0;
  double slightly_better = 1.0;
  double negligibly_better = 0.0;

  static MarginTable zeros() { return {0.0, 0.0, 0.0, 0.0}; }
  double margin(Degree d) const;
  /// MuchBetter >= Better >= SlightlyBetter >= NegligiblyBetter >= 0.
  void validate() const;
};

/// -log sigma(r(y_w) - r(y_l) - m) on raw scores.
double reward_pair_loss(const RewardModel& model, const PreferencePair& pair, double margin);

/// Mean pair loss; margins == nullptr means no margins. Skipped pairs are
/// rejected.
double reward_loss(const RewardModel& model, std::span<const PreferencePair> pairs, const MarginTable* margins);
std::vector<double> reward_loss_grad(const RewardModel& model, std::span<const PreferencePair> pairs,
                                     const MarginTable* margins);

/// Fraction of pairs with r(y_w) > r(y_l).
double reward_accuracy(const RewardModel& model, std::span<const PreferencePair> pairs);

struct RewardTrainConfig {
  int epochs = 20;
  std::size_t batch_size = 32;
  OptimizerConfig optimizer{OptimizerKind::Momentum, 0.05};
  MarginTable margins;
  bool use_margins = true;
  double l2 = 0.0;
  /// Store mean/std of training rewards and normalize reward() output.
  bool normalize = true;
  std::uint64_t seed = 0;
};

struct RewardEpoch {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct RewardTrainLog {
  std::vector<RewardEpoch> epochs;
};

struct RewardTrainResult {
  RewardModel final_model;
  RewardModel best_model;  // lowest validation loss
  int best_epoch = 0;
  RewardTrainLog log;
};

/// Minibatch descent on the margin-augmented Bradley-Terry cross-entropy.
/// Validation loss is measured without margins. Skipped records are dropped.
RewardTrainResult train_reward(RewardModel init, const PrefDataset& train, const PrefDataset& val,
                               const RewardTrainConfig& cfg);

enum class ScaleMode { Whiten, ScaleOnly };

struct ScaledScores {
  std::vector<double> values;
  /// Constant input: whiten returned zeros, scale-only returned the input.
  bool degenerate = false;
};

ScaledScores scale_scores(std::span<const double> scores, ScaleMode mode);

struct OverfitReport {
  double final_train_loss = 0.0;
  double min_val_loss = 0.0;
  double final_val_loss = 0.0;
  double generalization_gap = 0.0;  // final val - final train
  int turning_point = 0;            // epoch of minimum val loss
  bool overfit = false;
};

/// overfit: final val loss sits more than `delta` above its minimum while
/// the final train loss is below `train_threshold`.
OverfitReport overfit_report(const RewardTrainLog& log, double delta = 0.05, double train_threshold = 0.1);

nlohmann::json to_json_value(const RewardModel& model);
RewardModel reward_model_from_json(const nlohmann::json& j);
void save_reward_model(const RewardModel& model, const std::filesystem::path& path);
RewardModel load_reward_model(const std::filesystem::path& path);

}  // namespace preflab
