#include "preflab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "preflab/error.hpp"
#include "preflab/numeric.hpp"

namespace preflab {

using nlohmann::json;

// ---------------------------------------------------------------------------
// TabularModel

TabularModel::TabularModel(int vocab_size) : vocab_size_(vocab_size) {}

std::string TabularModel::context_key(const std::string& prompt_id, std::span<const int> prefix) {
  std::string key = prompt_id;
  key += '|';
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (i) key += ',';
    key += std::to_string(prefix[i]);
  }
  return key;
}

std::optional<std::size_t> TabularModel::find_row(const std::string& key) const {
  const auto it = index_.find(key);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t TabularModel::materialize(const std::string& key) {
  if (const auto row = find_row(key)) return *row;
  const std::size_t row = keys_.size();
  keys_.push_back(key);
  index_.emplace(key, row);
  params_.resize(params_.size() + static_cast<std::size_t>(vocab_size_), 0.0);
  return row;
}

TabularModel TabularModel::permuted(std::span<const std::size_t> perm) const {
  if (perm.size() != keys_.size()) throw ConfigError("permutation size does not match row count");
  TabularModel out(vocab_size_);
  const auto v = static_cast<std::size_t>(vocab_size_);
  for (std::size_t old_row : perm) {
    const std::size_t row = out.materialize(keys_.at(old_row));
    std::copy_n(params_.begin() + static_cast<std::ptrdiff_t>(old_row * v), v,
                out.params_.begin() + static_cast<std::ptrdiff_t>(row * v));
  }
  if (out.num_rows() != num_rows()) throw ConfigError("permutation repeats rows");
  return out;
}

// ---------------------------------------------------------------------------
// NeuralModel

std::vector<double> prompt_features(const PromptSpec& spec) {
  std::vector<double> f(NeuralModel::kPromptDim, 0.0);
  f[static_cast<std::size_t>(spec.tmpl)] = 1.0;
  if (spec.primary != Move::Stay) f[5 + static_cast<std::size_t>(spec.primary)] = 1.0;
  if (spec.secondary != Move::Stay) f[9 + static_cast<std::size_t>(spec.secondary)] = 1.0;
  f[13] = static_cast<double>(spec.length) / 8.0;
  return f;
}

NeuralModel::NeuralModel(int vocab_size, int max_len, NeuralShape shape)
    : vocab_size_(vocab_size), max_len_(max_len), shape_(shape) {
  if (shape.window < 1 || shape.hidden < 1) throw ConfigError("neural policy needs window >= 1 and hidden >= 1");
  params_.assign(expected_params(), 0.0);
}

int NeuralModel::input_dim() const noexcept {
  return shape_.window * (vocab_size_ + 1) + kPromptDim + max_len_;
}

std::size_t NeuralModel::expected_params() const noexcept {
  const auto h = static_cast<std::size_t>(shape_.hidden);
  const auto in = static_cast<std::size_t>(input_dim());
  const auto v = static_cast<std::size_t>(vocab_size_);
  return h * in + h + v * h + v;
}

void NeuralModel::encode(const Prompt& prompt, std::span<const int> prefix, std::vector<double>& input) const {
  input.assign(static_cast<std::size_t>(input_dim()), 0.0);
  const auto block = static_cast<std::size_t>(vocab_size_ + 1);
  const auto t = static_cast<long>(prefix.size());
  for (int w = 0; w < shape_.window; ++w) {
    const long pos = t - 1 - w;
    const int tok = pos >= 0 ? prefix[static_cast<std::size_t>(pos)] : vocab_size_;
    input[static_cast<std::size_t>(w) * block + static_cast<std::size_t>(tok)] = 1.0;
  }
  const std::size_t off = static_cast<std::size_t>(shape_.window) * block;
  const auto pf = prompt_features(prompt.spec);
  std::copy(pf.begin(), pf.end(), input.begin() + static_cast<std::ptrdiff_t>(off));
  const std::size_t pos_off = off + kPromptDim;
  input[pos_off + std::min<std::size_t>(prefix.size(), static_cast<std::size_t>(max_len_ - 1))] = 1.0;
}

void NeuralModel::forward(const Prompt& prompt, std::span<const int> prefix, std::span<double> logits) const {
  std::vector<double> x;
  encode(prompt, prefix, x);
  const auto h = static_cast<std::size_t>(shape_.hidden);
  const auto in = x.size();
  const auto v = static_cast<std::size_t>(vocab_size_);
  const double* w1 = params_.data();
  const double* b1 = w1 + h * in;
  const double* w2 = b1 + h;
  const double* b2 = w2 + v * h;
  std::vector<double> hid(h);
  for (std::size_t i = 0; i < h; ++i) {
    double a = b1[i];
    for (std::size_t j = 0; j < in; ++j) a += w1[i * in + j] * x[j];
    hid[i] = std::tanh(a);
  }
  for (std::size_t k = 0; k < v; ++k) {
    double z = b2[k];
    for (std::size_t i = 0; i < h; ++i) z += w2[k * h + i] * hid[i];
    logits[k] = z;
  }
}

void NeuralModel::backward(const Prompt& prompt, std::span<const int> prefix, std::span<const double> dlogits,
                           std::span<double> grad) const {
  std::vector<double> x;
  encode(prompt, prefix, x);
  const auto h = static_cast<std::size_t>(shape_.hidden);
  const auto in = x.size();
  const auto v = static_cast<std::size_t>(vocab_size_);
  const double* w1 = params_.data();
  const double* b1 = w1 + h * in;
  const double* w2 = b1 + h;
  double* g_w1 = grad.data();
  double* g_b1 = g_w1 + h * in;
  double* g_w2 = g_b1 + h;
  double* g_b2 = g_w2 + v * h;

  std::vector<double> hid(h);
  for (std::size_t i = 0; i < h; ++i) {
    double a = b1[i];
    for (std::size_t j = 0; j < in; ++j) a += w1[i * in + j] * x[j];
    hid[i] = std::tanh(a);
  }
  std::vector<double> dh(h, 0.0);
  for (std::size_t k = 0; k < v; ++k) {
    const double dz = dlogits[k];
    if (dz == 0.0) continue;
    g_b2[k] += dz;
    for (std::size_t i = 0; i < h; ++i) {
      g_w2[k * h + i] += dz * hid[i];
      dh[i] += dz * w2[k * h + i];
    }
  }
  for (std::size_t i = 0; i < h; ++i) {
    const double da = dh[i] * (1.0 - hid[i] * hid[i]);
    if (da == 0.0) continue;
    g_b1[i] += da;
    for (std::size_t j = 0; j < in; ++j)
      if (x[j] != 0.0) g_w1[i * in + j] += da * x[j];
  }
}

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(Vocab vocab, int max_len, std::variant<TabularModel, NeuralModel> model)
    : vocab_(std::move(vocab)), max_len_(max_len), model_(std::move(model)) {
  if (max_len_ < 1) throw ConfigError("max completion length must be >= 1");
}

Policy Policy::tabular(Vocab vocab, int max_len) {
  const int v = vocab.size();
  return Policy(std::move(vocab), max_len, TabularModel(v));
}

Policy Policy::neural(Vocab vocab, int max_len, NeuralShape shape, std::uint64_t seed, double init_std) {
  NeuralModel model(vocab.size(), max_len, shape);
  Rng rng(derive_seed(seed, 0x6e6575ULL));
  std::normal_distribution<double> normal(0.0, init_std);
  const auto h = static_cast<std::size_t>(shape.hidden);
  const auto in = static_cast<std::size_t>(model.input_dim());
  const auto v = static_cast<std::size_t>(vocab.size());
  auto& p = model.params();
  for (std::size_t i = 0; i < h * in; ++i) p[i] = normal(rng);
  const std::size_t w2 = h * in + h;
  for (std::size_t i = 0; i < v * h; ++i) p[w2 + i] = normal(rng);
  return Policy(std::move(vocab), max_len, std::move(model));
}

PolicyKind Policy::kind() const noexcept {
  return std::holds_alternative<TabularModel>(model_) ? PolicyKind::Tabular : PolicyKind::Neural;
}

std::span<const double> Policy::params() const noexcept {
  return std::visit([](const auto& m) { return std::span<const double>(m.params()); }, model_);
}

std::span<double> Policy::mutable_params() noexcept {
  return std::visit([](auto& m) { return std::span<double>(m.params()); }, model_);
}

void Policy::logits(const Prompt& prompt, std::span<const int> prefix, std::span<double> out) const {
  if (const auto* tab = tabular_model()) {
    const auto row = tab->find_row(TabularModel::context_key(prompt.id, prefix));
    if (!row) {
      std::fill(out.begin(), out.end(), 0.0);
      return;
    }
    const auto v = static_cast<std::size_t>(vocab_.size());
    std::copy_n(tab->params().begin() + static_cast<std::ptrdiff_t>(*row * v), v, out.begin());
    return;
  }
  std::get<NeuralModel>(model_).forward(prompt, prefix, out);
}

void Policy::backprop_logits(const Prompt& prompt, std::span<const int> prefix, std::span<const double> dlogits,
                             std::span<double> grad) const {
  if (grad.size() != num_params()) throw ConfigError("gradient buffer does not match parameter count");
  if (const auto* tab = tabular_model()) {
    const auto row = tab->find_row(TabularModel::context_key(prompt.id, prefix));
    if (!row) throw Error("tabular context not materialized: " + TabularModel::context_key(prompt.id, prefix));
    const auto v = static_cast<std::size_t>(vocab_.size());
    for (std::size_t k = 0; k < v; ++k) grad[*row * v + k] += dlogits[k];
    return;
  }
  std::get<NeuralModel>(model_).backward(prompt, prefix, dlogits, grad);
}

void Policy::materialize(const Prompt& prompt, const TokenSeq& seq) {
  auto* tab = tabular_model();
  if (!tab) return;
  validate(vocab_, seq, max_len_);
  for (std::size_t t = 0; t < seq.size(); ++t)
    tab->materialize(TabularModel::context_key(prompt.id, std::span<const int>(seq.tokens.data(), t)));
}

void Policy::materialize_all(const Prompt& prompt) {
  auto* tab = tabular_model();
  if (!tab) return;
  std::vector<int> prefix;
  // Depth-first over non-eos prefixes shorter than max_len.
  auto rec = [&](auto&& self) -> void {
    tab->materialize(TabularModel::context_key(prompt.id, prefix));
    if (static_cast<int>(prefix.size()) + 1 >= max_len_) return;
    for (int tok = 0; tok < vocab_.size(); ++tok) {
      if (tok == vocab_.eos()) continue;
      prefix.push_back(tok);
      self(self);
      prefix.pop_back();
    }
  };
  rec(rec);
}

void Policy::set_context_logits(const Prompt& prompt, std::span<const int> prefix, std::span<const double> logits) {
  auto* tab = tabular_model();
  if (!tab) throw ConfigError("set_context_logits needs a tabular policy");
  if (static_cast<int>(logits.size()) != vocab_.size()) throw ConfigError("logit row has the wrong width");
  const std::size_t row = tab->materialize(TabularModel::context_key(prompt.id, prefix));
  const auto v = static_cast<std::size_t>(vocab_.size());
  std::copy(logits.begin(), logits.end(), tab->params().begin() + static_cast<std::ptrdiff_t>(row * v));
}

// ---------------------------------------------------------------------------
// Free functions

std::vector<double> next_token_logprobs(const Policy& policy, const Prompt& prompt, std::span<const int> prefix,
                                        double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  std::vector<double> z(static_cast<std::size_t>(policy.vocab().size()));
  policy.logits(prompt, prefix, z);
  log_softmax_inplace(z, temperature);
  return z;
}

std::vector<double> per_token_logprobs(const Policy& policy, const Prompt& prompt, const TokenSeq& completion) {
  validate(policy.vocab(), completion, policy.max_len());
  std::vector<double> out;
  out.reserve(completion.size());
  std::span<const int> toks(completion.tokens);
  for (std::size_t t = 0; t < completion.size(); ++t) {
    const auto lp = next_token_logprobs(policy, prompt, toks.first(t));
    out.push_back(lp[static_cast<std::size_t>(toks[t])]);
  }
  return out;
}

double logprob(const Policy& policy, const Prompt& prompt, const TokenSeq& completion) {
  double s = 0.0;
  for (double lp : per_token_logprobs(policy, prompt, completion)) s += lp;
  return s;
}

TokenSeq sample(const Policy& policy, const Prompt& prompt, const SampleOptions& opts, Rng& rng) {
  if (!opts.greedy && !(opts.temperature > 0.0)) throw ConfigError("temperature must be positive");
  const Vocab& vocab = policy.vocab();
  std::vector<int> tokens;
  std::vector<double> z(static_cast<std::size_t>(vocab.size()));
  while (static_cast<int>(tokens.size()) < policy.max_len()) {
    policy.logits(prompt, tokens, z);
    int next = 0;
    if (opts.greedy) {
      next = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
    } else {
      log_softmax_inplace(z, opts.temperature);
      const double u = uniform01(rng);
      double acc = 0.0;
      next = -1;
      for (std::size_t k = 0; k < z.size(); ++k) {
        const double p = std::exp(z[k]);
        if (p > 0.0) next = static_cast<int>(k);
        acc += p;
        if (u < acc) break;
      }
    }
    tokens.push_back(next);
    if (next == vocab.eos()) break;
  }
  return make_seq(vocab, std::move(tokens));
}

TokenSeq sample(const Policy& policy, const Prompt& prompt, double temperature, std::uint64_t seed) {
  Rng rng(seed);
  return sample(policy, prompt, SampleOptions{temperature, false}, rng);
}

TokenSeq greedy_decode(const Policy& policy, const Prompt& prompt) {
  Rng rng(0);
  return sample(policy, prompt, SampleOptions{1.0, true}, rng);
}

void accumulate_grad_logprob(const Policy& policy, const Prompt& prompt, const TokenSeq& completion, double scale,
                             std::span<double> grad) {
  validate(policy.vocab(), completion, policy.max_len());
  std::span<const int> toks(completion.tokens);
  for (std::size_t t = 0; t < completion.size(); ++t) {
    auto d = next_token_logprobs(policy, prompt, toks.first(t));
    // d log softmax_y / d z = onehot(y) - p
    for (double& v : d) v = -std::exp(v) * scale;
    d[static_cast<std::size_t>(toks[t])] += scale;
    policy.backprop_logits(prompt, toks.first(t), d, grad);
  }
}

std::vector<double> grad_logprob(const Policy& policy, const Prompt& prompt, const TokenSeq& completion) {
  std::vector<double> g(policy.num_params(), 0.0);
  accumulate_grad_logprob(policy, prompt, completion, 1.0, g);
  return g;
}

// ---------------------------------------------------------------------------
// Checkpoints

json to_json_value(const Policy& p) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["kind"] = p.kind() == PolicyKind::Tabular ? "tabular" : "neural";
  j["vocab"] = {{"tokens", p.vocab_.tokens()}, {"eos", p.vocab_.eos()}};
  j["max_len"] = p.max_len_;
  if (const auto* tab = p.tabular_model()) {
    j["shape"] = {{"rows", tab->num_rows()}, {"width", tab->vocab_size()}};
    j["contexts"] = tab->keys();
  } else {
    const auto& nm = std::get<NeuralModel>(p.model_);
    j["shape"] = {{"window", nm.shape().window}, {"hidden", nm.shape().hidden}, {"input_dim", nm.input_dim()}};
  }
  j["params"] = std::vector<double>(p.params().begin(), p.params().end());
  return j;
}

Policy policy_from_json(const json& j) {
  const int version = j.at("format_version").get<int>();
  if (version != kCheckpointFormatVersion)
    throw MigrationError("policy checkpoint format_version " + std::to_string(version) + " is not supported (expected " +
                         std::to_string(kCheckpointFormatVersion) + ")");
  Vocab vocab(j.at("vocab").at("tokens").get<std::vector<std::string>>(), j.at("vocab").at("eos").get<int>());
  const int max_len = j.at("max_len").get<int>();
  auto params = j.at("params").get<std::vector<double>>();
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "tabular") {
    TabularModel tab(vocab.size());
    for (const auto& key : j.at("contexts").get<std::vector<std::string>>()) tab.materialize(key);
    if (params.size() != tab.params().size()) throw ParseError(1, "tabular parameter count does not match contexts");
    tab.params() = std::move(params);
    return Policy(std::move(vocab), max_len, std::move(tab));
  }
  if (kind == "neural") {
    NeuralShape shape{j.at("shape").at("window").get<int>(), j.at("shape").at("hidden").get<int>()};
    NeuralModel nm(vocab.size(), max_len, shape);
    if (params.size() != nm.expected_params()) throw ParseError(1, "neural parameter count does not match shape");
    nm.params() = std::move(params);
    return Policy(std::move(vocab), max_len, std::move(nm));
  }
  throw ParseError(1, "unknown policy kind '" + kind + "'");
}

void save_policy(const Policy& policy, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << to_json_value(policy).dump() << '\n';
}

Policy load_policy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(1, std::string("policy checkpoint: ") + e.what());
  }
  return policy_from_json(j);
}

}  // namespace preflab
