#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "preflab/dpo.hpp"
#include "preflab/eval.hpp"
#include "preflab/oracle.hpp"
#include "preflab/pref_data.hpp"
#include "preflab/reward_model.hpp"
#include "preflab/rlhf.hpp"

namespace preflab {

inline constexpr const char* kToolVersion = "0.3.0";

// ---------------------------------------------------------------------------
// Resolved configuration. Every field maps to one flat config key
// "<section>-<name>" (see configs/default.toml).

struct DomainSettings {
  bool with_stay = true;
  int max_len = 4;
  std::size_t prompts = 6;
  int max_moves = 4;
  std::uint64_t prompt_seed = 11;
};

struct PolicySettings {
  std::string kind = "neural";  // neural | tabular
  int window = 3;
  int hidden = 32;
  double init_std = 0.1;
  std::uint64_t seed = 5;
};

struct DataSettings {
  std::size_t pairs = 6000;
  double temperature = 1.2;
  double test_fraction = 0.1;
  double sharpness = 8.0;
  std::array<double, 3> thresholds{0.05, 0.15, 0.35};
  double skip_below = 0.2;
  /// Training-time filter: "all" or a comma list of degree names.
  std::string degrees = "all";
  double fraction = 1.0;
};

struct RewardSettings {
  std::string arch = "linear";         // linear | tiny-neural
  std::string features = "handcrafted";  // handcrafted | expressive
  int hidden = 16;
  int epochs = 20;
  std::size_t batch = 32;
  double lr = 0.05;
  std::array<double, 4> margins{3.0, 2.0, 1.0, 0.0};
  bool use_margins = true;
  double l2 = 0.0;
  bool normalize = true;
};

struct DpoSettings {
  double beta = 0.1;
  std::string variant = "sigmoid";
  double label_smoothing = 0.0;
  double kto_reference = 0.0;
  int epochs = 20;
  std::size_t batch = 64;
  std::string optimizer = "momentum";  // sgd | momentum
  double lr = 0.5;
  double momentum = 0.9;
};

struct RlhfSettings {
  double kl_coeff = 0.05;
  std::string kl_mode = "fixed";
  double target_kl = 1.0;
  std::size_t batch_prompts = 16;
  std::size_t steps = 200;
  double temperature = 1.0;
  bool whiten_advantages = true;
  std::string reward_scaling = "whiten";
  double clip = 0.2;
  int ppo_epochs = 1;
  double value_weight = 0.5;
  double lr = 0.01;
  double value_lr = 0.01;
  double lr_final_fraction = 1.0;
  /// "truth" uses the ground-truth scorer; "model" a reward checkpoint.
  std::string reward = "model";
  double spike_kl_factor = 10.0;
  double spike_reward_factor = 10.0;
  double spike_kl_floor = 0.05;
  double spike_reward_floor = 1.0;
  std::size_t spike_window = 20;
};

struct EvalSettings {
  std::vector<double> temperatures{1.0, 1.2, 1.5, 2.0};
  std::size_t comparisons = 200;
  double tie_band = 0.02;
  std::size_t pool_size = 32;
  std::size_t mm_per_prompt = 10;
  std::size_t diversity_pairs = 300;
  double min_gap = 0.15;
};

struct ExperimentConfig {
  DomainSettings domain;
  PolicySettings policy;
  DataSettings data;
  RewardSettings reward;
  DpoSettings dpo;
  RlhfSettings rlhf;
  EvalSettings eval;
  std::uint64_t seed = 0;
  double enumeration_cap = kDefaultEnumerationCap;

  /// Throws ConfigError naming the offending key.
  void validate() const;
};

nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const nlohmann::json& j);

// Library configs derived from the resolved settings.
SyntheticLabelConfig label_config(const ExperimentConfig& cfg);
DpoConfig dpo_config(const ExperimentConfig& cfg);
DpoTrainConfig dpo_train_config(const ExperimentConfig& cfg);
RewardTrainConfig reward_train_config(const ExperimentConfig& cfg);
RlhfConfig rlhf_config(const ExperimentConfig& cfg);
SpikeThresholds spike_thresholds(const ExperimentConfig& cfg);
EvalConfig eval_config(const ExperimentConfig& cfg, double temperature);

/// "all" or comma-separated degree names.
std::set<Degree> parse_degrees(const std::string& list);

// ---------------------------------------------------------------------------
// Pipeline pieces

struct Domain {
  Vocab vocab;
  int max_len = 0;
  std::vector<Prompt> prompts;
};

Domain make_domain(const ExperimentConfig& cfg);
Policy make_reference(const ExperimentConfig& cfg, const Domain& domain);
ScoreFn truth_judge(const Vocab& vocab);

/// `data.pairs` sampled pairs (Skipped included), prompts cycled in order;
/// pair i draws its two completions from seeds derived from (seed, i).
PrefDataset generate_pairs(const ExperimentConfig& cfg, const Domain& domain, const Policy& generator);

/// Seeded train/test split of generated pairs.
std::pair<PrefDataset, PrefDataset> split_pairs(const ExperimentConfig& cfg, const PrefDataset& all);

/// Applies the degree filter and data fraction to a training split.
PrefDataset training_view(const ExperimentConfig& cfg, const PrefDataset& train);

struct RankingRun {
  double agreement = 0.0;
  double reference_agreement = 0.0;
  std::size_t heldout = 0;
  DpoTrainResult training;
  PrefDataset test;
};

/// generate -> split -> filter -> train DPO -> held-out ranking agreement.
RankingRun run_ranking(const ExperimentConfig& cfg);

// ---------------------------------------------------------------------------
// Output helpers

/// Line-delimited JSON writer that flushes after every record.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::filesystem::path& path);
  void write(const nlohmann::ordered_json& record);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);

struct RunManifest {
  std::string command;
  nlohmann::ordered_json config;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;   // path -> digest
  std::map<std::string, std::string> outputs;  // path -> digest
  std::string tool_version = kToolVersion;
};

nlohmann::ordered_json to_json(const RunManifest& m);
/// Digests every output path, then writes manifest.json into `dir`.
void write_manifest(RunManifest m, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Sweeps

struct SweepCell {
  std::string value;
  std::vector<double> per_seed;
  double mean = 0.0;
  double ci95 = 0.0;  // half-width, Student t over seeds
  std::vector<std::string> failures;
};

struct SweepTable {
  std::string axis;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepCell> cells;
};

/// Student-t 95% half-width of the mean.
double t_confidence_halfwidth(const std::vector<double>& xs);

/// Applies one sweep value to a copy of the config. Axes: beta, loss,
/// data-fraction, degrees, temperature (the last only sets the eval
/// temperature).
ExperimentConfig apply_axis(const ExperimentConfig& cfg, const std::string& axis, const std::string& value);

/// One training/eval run per (value, seed). Metric: held-out ranking
/// agreement, or win rate against the reference for the temperature axis.
/// Failing cells record the error and the sweep continues.
SweepTable run_sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<std::string>& values,
                     const std::vector<std::uint64_t>& seeds,
                     const std::function<void(const std::string&)>& progress = {});

nlohmann::ordered_json to_json(const SweepTable& t);
std::string render_table(const SweepTable& t);

}  // namespace preflab
