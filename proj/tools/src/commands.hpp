#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "preflab/experiment.hpp"

namespace preflab::cli {

namespace fs = std::filesystem;

struct Context {
  ExperimentConfig cfg;
  std::string command;  // e.g. "train dpo"
  std::ostream* out = nullptr;
  std::ostream* err = nullptr;
};

struct GenDataArgs {
  fs::path out;
  std::optional<fs::path> generator;  // policy checkpoint; default reference
};

struct TrainArgs {
  fs::path data;
  fs::path out;
  std::optional<fs::path> init;          // starting policy (dpo, rlhf)
  std::optional<fs::path> reward_model;  // rlhf with rlhf-reward = model
  std::optional<std::size_t> max_pairs;  // reward: cap on training pairs
  bool log_steps = false;
};

struct EvaluateArgs {
  fs::path policy;
  std::optional<fs::path> baseline;
  std::optional<fs::path> data;  // adds held-out ranking agreement
  fs::path out;
};

struct SweepArgs {
  std::string axis;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::size_t jobs = 1;
  fs::path out;
};

struct VerifyArgs {
  std::optional<double> ipo_target;
  std::size_t gradient_configs = 20;
  std::size_t rlhf_steps = 2000;
  fs::path out;
};

struct OracleArgs {
  std::size_t prompt_index = 0;
  std::optional<double> beta;  // default rlhf-kl-coeff
  std::optional<fs::path> policy;
  fs::path out;
};

struct ServeArgs {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::optional<fs::path> tasks_from;
  std::size_t tasks = 50;
  std::vector<std::string> labelers{"labeler-1", "labeler-2"};
  fs::path static_dir;
  fs::path out;
  double exit_after = 0.0;  // seconds; 0 serves until interrupted
};

struct ReportArgs {
  std::vector<fs::path> runs;
  bool json = false;
};

/// Resolved config as flat `key = value` lines accepted by --config.
std::string flat_config(const ExperimentConfig& cfg);

int cmd_gen_data(const Context& ctx, const GenDataArgs& a);
int cmd_train_reward(const Context& ctx, const TrainArgs& a);
int cmd_train_dpo(const Context& ctx, const TrainArgs& a);
int cmd_train_rlhf(const Context& ctx, const TrainArgs& a);
int cmd_evaluate(const Context& ctx, const EvaluateArgs& a);
int cmd_sweep(const Context& ctx, const SweepArgs& a);
int cmd_verify(const Context& ctx, const VerifyArgs& a);
int cmd_oracle(const Context& ctx, const OracleArgs& a);
int cmd_serve_annotation(const Context& ctx, const ServeArgs& a);
int cmd_report(const Context& ctx, const ReportArgs& a);

}  // namespace preflab::cli
