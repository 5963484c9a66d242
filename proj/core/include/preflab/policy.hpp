#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "preflab/motion.hpp"
#include "preflab/random.hpp"
#include "preflab/sequence.hpp"

namespace preflab {

/// One logit row per (prompt id, prefix) context. Rows are materialized on
/// demand; an absent row behaves as all-zero logits (uniform).
class TabularModel {
 public:
  explicit TabularModel(int vocab_size);

  int vocab_size() const noexcept { return vocab_size_; }
  std::size_t num_rows() const noexcept { return keys_.size(); }

  static std::string context_key(const std::string& prompt_id, std::span<const int> prefix);

  std::optional<std::size_t> find_row(const std::string& key) const;
  std::size_t materialize(const std::string& key);

  const std::vector<std::string>& keys() const noexcept { return keys_; }
  std::vector<double>& params() noexcept { return params_; }
  const std::vector<double>& params() const noexcept { return params_; }

  /// Same distribution, rows stored in the order given by `perm`
  /// (new row i holds old row perm[i]).
  TabularModel permuted(std::span<const std::size_t> perm) const;

 private:
  int vocab_size_;
  std::vector<std::string> keys_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<double> params_;
};

struct NeuralShape {
  int window = 3;
  int hidden = 16;
};

/// Single tanh hidden layer over [one-hot token window | prompt features |
/// position one-hot]. Params: W1 (hidden x input), b1, W2 (vocab x hidden), b2.
class NeuralModel {
 public:
  static constexpr int kPromptDim = 14;

  NeuralModel(int vocab_size, int max_len, NeuralShape shape);

  int vocab_size() const noexcept { return vocab_size_; }
  int max_len() const noexcept { return max_len_; }
  const NeuralShape& shape() const noexcept { return shape_; }
  int input_dim() const noexcept;
  std::size_t expected_params() const noexcept;

  std::vector<double>& params() noexcept { return params_; }
  const std::vector<double>& params() const noexcept { return params_; }

  /// Dense input vector for one context.
  void encode(const Prompt& prompt, std::span<const int> prefix, std::vector<double>& input) const;

  void forward(const Prompt& prompt, std::span<const int> prefix, std::span<double> logits) const;
  void backward(const Prompt& prompt, std::span<const int> prefix, std::span<const double> dlogits,
                std::span<double> grad) const;

 private:
  int vocab_size_;
  int max_len_;
  NeuralShape shape_;
  std::vector<double> params_;
};

/// Fixed prompt embedding shared by the neural policy and value model.
std::vector<double> prompt_features(const PromptSpec& spec);

enum class PolicyKind { Tabular, Neural };

/// Autoregressive conditional distribution over completion tokens.
/// Copyable value type; copies are independent.
class Policy {
 public:
  static Policy tabular(Vocab vocab, int max_len);
  static Policy neural(Vocab vocab, int max_len, NeuralShape shape, std::uint64_t seed, double init_std = 0.1);

  PolicyKind kind() const noexcept;
  const Vocab& vocab() const noexcept { return vocab_; }
  int max_len() const noexcept { return max_len_; }

  std::span<const double> params() const noexcept;
  std::span<double> mutable_params() noexcept;
  std::size_t num_params() const noexcept { return params().size(); }

  /// Raw next-token logits for a context.
  void logits(const Prompt& prompt, std::span<const int> prefix, std::span<double> out) const;

  /// Adds J^T dlogits into `grad` (length num_params()). Tabular contexts
  /// must be materialized first.
  void backprop_logits(const Prompt& prompt, std::span<const int> prefix, std::span<const double> dlogits,
                       std::span<double> grad) const;

  /// Ensures every context visited by `seq` owns a parameter row (tabular
  /// only; no-op for neural). Grows num_params().
  void materialize(const Prompt& prompt, const TokenSeq& seq);

  /// Materializes every context reachable within max_len.
  void materialize_all(const Prompt& prompt);

  /// Overwrites one context's logits (tabular only).
  void set_context_logits(const Prompt& prompt, std::span<const int> prefix, std::span<const double> logits);

  const TabularModel* tabular_model() const noexcept { return std::get_if<TabularModel>(&model_); }
  TabularModel* tabular_model() noexcept { return std::get_if<TabularModel>(&model_); }
  const NeuralModel* neural_model() const noexcept { return std::get_if<NeuralModel>(&model_); }

  friend nlohmann::json to_json_value(const Policy& p);
  friend Policy policy_from_json(const nlohmann::json& j);

 private:
  Policy(Vocab vocab, int max_len, std::variant<TabularModel, NeuralModel> model);

  Vocab vocab_;
  int max_len_;
  std::variant<TabularModel, NeuralModel> model_;
};

nlohmann::json to_json_value(const Policy& p);
Policy policy_from_json(const nlohmann::json& j);

/// Log-probabilities of the next token at `temperature`.
std::vector<double> next_token_logprobs(const Policy& policy, const Prompt& prompt, std::span<const int> prefix,
                                        double temperature = 1.0);

/// log pi(y_t | x, y_<t) for every position.
std::vector<double> per_token_logprobs(const Policy& policy, const Prompt& prompt, const TokenSeq& completion);

/// sum_t log pi(y_t | x, y_<t).
double logprob(const Policy& policy, const Prompt& prompt, const TokenSeq& completion);

struct SampleOptions {
  double temperature = 1.0;
  /// Argmax decoding (the temperature -> 0 limit) without dividing by zero.
  bool greedy = false;
};

TokenSeq sample(const Policy& policy, const Prompt& prompt, const SampleOptions& opts, Rng& rng);
TokenSeq sample(const Policy& policy, const Prompt& prompt, double temperature, std::uint64_t seed);
TokenSeq greedy_decode(const Policy& policy, const Prompt& prompt);

/// grad += scale * d logprob / d params.
void accumulate_grad_logprob(const Policy& policy, const Prompt& prompt, const TokenSeq& completion, double scale,
                             std::span<double> grad);

std::vector<double> grad_logprob(const Policy& policy, const Prompt& prompt, const TokenSeq& completion);

/// Versioned JSON checkpoint (kind, vocab, shape metadata, flat params).
inline constexpr int kCheckpointFormatVersion = 1;
void save_policy(const Policy& policy, const std::filesystem::path& path);
Policy load_policy(const std::filesystem::path& path);

}  // namespace preflab
