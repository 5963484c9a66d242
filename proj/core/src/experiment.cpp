#include "preflab/experiment.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "preflab/error.hpp"
#include "preflab/hash.hpp"
#include "preflab/numeric.hpp"
#include "preflab/random.hpp"

namespace preflab {

using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Config

namespace {

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

}  // namespace

void ExperimentConfig::validate() const {
  require(domain.max_len >= 1 && domain.max_len <= 16, "domain-max-len", "must be in [1, 16]");
  require(domain.prompts >= 1, "domain-prompts", "must be >= 1");
  require(domain.max_moves >= 2 && domain.max_moves <= domain.max_len, "domain-max-moves",
          "must be in [2, domain-max-len]");
  require(policy.kind == "neural" || policy.kind == "tabular", "policy-kind", "must be neural or tabular");
  require(policy.window >= 1 && policy.hidden >= 1, "policy-hidden", "window and hidden must be >= 1");
  require(policy.init_std >= 0.0, "policy-init-std", "must be nonnegative");
  require(data.pairs >= 1, "data-pairs", "must be >= 1");
  require(data.temperature > 0.0, "data-temperature", "must be positive");
  require(data.test_fraction > 0.0 && data.test_fraction < 1.0, "data-test-fraction", "must be in (0, 1)");
  require(data.sharpness > 0.0, "data-sharpness", "must be positive");
  require(data.fraction > 0.0 && data.fraction <= 1.0, "data-fraction", "must be in (0, 1]");
  try {
    DegreeThresholds{data.thresholds}.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("data-thresholds: ") + e.what());
  }
  try {
    parse_degrees(data.degrees);
  } catch (const Error& e) {
    throw ConfigError(std::string("data-degrees: ") + e.what());
  }
  require(reward.arch == "linear" || reward.arch == "tiny-neural", "reward-arch", "must be linear or tiny-neural");
  require(reward.features == "handcrafted" || reward.features == "expressive", "reward-features",
          "must be handcrafted or expressive");
  require(reward.epochs >= 1, "reward-epochs", "must be >= 1");
  require(reward.lr > 0.0, "reward-lr", "must be positive");
  require(dpo.beta > 0.0, "dpo-beta", "must be positive");
  try {
    dpo_variant_from_name(dpo.variant);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("dpo-variant: ") + e.what());
  }
  require(dpo.label_smoothing >= 0.0 && dpo.label_smoothing < 0.5, "dpo-label-smoothing", "must be in [0, 0.5)");
  require(dpo.epochs >= 1, "dpo-epochs", "must be >= 1");
  require(dpo.optimizer == "sgd" || dpo.optimizer == "momentum", "dpo-optimizer", "must be sgd or momentum");
  require(dpo.lr > 0.0, "dpo-lr", "must be positive");
  require(rlhf.kl_coeff > 0.0, "rlhf-kl-coeff", "must be positive");
  require(rlhf.kl_mode == "fixed" || rlhf.kl_mode == "adaptive", "rlhf-kl-mode", "must be fixed or adaptive");
  require(rlhf.reward == "model" || rlhf.reward == "truth", "rlhf-reward", "must be model or truth");
  try {
    reward_scaling_from_name(rlhf.reward_scaling);
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("rlhf-reward-scaling: ") + e.what());
  }
  require(rlhf.batch_prompts >= 1, "rlhf-batch-prompts", "must be >= 1");
  require(rlhf.temperature > 0.0, "rlhf-temperature", "must be positive");
  require(rlhf.lr > 0.0 && rlhf.value_lr > 0.0, "rlhf-lr", "learning rates must be positive");
  require(rlhf.lr_final_fraction > 0.0 && rlhf.lr_final_fraction <= 1.0, "rlhf-lr-final-fraction",
          "must be in (0, 1]");
  require(!eval.temperatures.empty(), "eval-temperatures", "must list at least one temperature");
  for (double t : eval.temperatures) require(t > 0.0, "eval-temperatures", "must be positive");
  require(eval.comparisons >= 1, "eval-comparisons", "must be >= 1");
  require(eval.tie_band >= 0.0, "eval-tie-band", "must be nonnegative");
  require(eval.pool_size >= 3, "eval-pool-size", "must be >= 3");
  require(eval.mm_per_prompt >= 2, "eval-mm-per-prompt", "must be >= 2");
  require(enumeration_cap >= 1.0, "enumeration-cap", "must be >= 1");
}

ojson to_json(const ExperimentConfig& c) {
  ojson j;
  j["seed"] = c.seed;
  j["enumeration_cap"] = c.enumeration_cap;
  j["domain"] = {{"with_stay", c.domain.with_stay},
                 {"max_len", c.domain.max_len},
                 {"prompts", c.domain.prompts},
                 {"max_moves", c.domain.max_moves},
                 {"prompt_seed", c.domain.prompt_seed}};
  j["policy"] = {{"kind", c.policy.kind},
                 {"window", c.policy.window},
                 {"hidden", c.policy.hidden},
                 {"init_std", c.policy.init_std},
                 {"seed", c.policy.seed}};
  j["data"] = {{"pairs", c.data.pairs},
               {"temperature", c.data.temperature},
               {"test_fraction", c.data.test_fraction},
               {"sharpness", c.data.sharpness},
               {"thresholds", c.data.thresholds},
               {"skip_below", c.data.skip_below},
               {"degrees", c.data.degrees},
               {"fraction", c.data.fraction}};
  j["reward"] = {{"arch", c.reward.arch},
                 {"features", c.reward.features},
                 {"hidden", c.reward.hidden},
                 {"epochs", c.reward.epochs},
                 {"batch", c.reward.batch},
                 {"lr", c.reward.lr},
                 {"margins", c.reward.margins},
                 {"use_margins", c.reward.use_margins},
                 {"l2", c.reward.l2},
                 {"normalize", c.reward.normalize}};
  j["dpo"] = {{"beta", c.dpo.beta},
              {"variant", c.dpo.variant},
              {"label_smoothing", c.dpo.label_smoothing},
              {"kto_reference", c.dpo.kto_reference},
              {"epochs", c.dpo.epochs},
              {"batch", c.dpo.batch},
              {"optimizer", c.dpo.optimizer},
              {"lr", c.dpo.lr},
              {"momentum", c.dpo.momentum}};
  j["rlhf"] = {{"kl_coeff", c.rlhf.kl_coeff},
               {"kl_mode", c.rlhf.kl_mode},
               {"target_kl", c.rlhf.target_kl},
               {"batch_prompts", c.rlhf.batch_prompts},
               {"steps", c.rlhf.steps},
               {"temperature", c.rlhf.temperature},
               {"whiten_advantages", c.rlhf.whiten_advantages},
               {"reward_scaling", c.rlhf.reward_scaling},
               {"clip", c.rlhf.clip},
               {"ppo_epochs", c.rlhf.ppo_epochs},
               {"value_weight", c.rlhf.value_weight},
               {"lr", c.rlhf.lr},
               {"value_lr", c.rlhf.value_lr},
               {"lr_final_fraction", c.rlhf.lr_final_fraction},
               {"reward", c.rlhf.reward},
               {"spike_kl_factor", c.rlhf.spike_kl_factor},
               {"spike_reward_factor", c.rlhf.spike_reward_factor},
               {"spike_kl_floor", c.rlhf.spike_kl_floor},
               {"spike_reward_floor", c.rlhf.spike_reward_floor},
               {"spike_window", c.rlhf.spike_window}};
  j["eval"] = {{"temperatures", c.eval.temperatures},
               {"comparisons", c.eval.comparisons},
               {"tie_band", c.eval.tie_band},
               {"pool_size", c.eval.pool_size},
               {"mm_per_prompt", c.eval.mm_per_prompt},
               {"diversity_pairs", c.eval.diversity_pairs},
               {"min_gap", c.eval.min_gap}};
  return j;
}

namespace {

// Reads a section, refusing keys that do not exist in the defaults.
class SectionReader {
 public:
  SectionReader(const nlohmann::json& root, const std::string& name) : name_(name) {
    if (root.contains(name)) {
      section_ = root.at(name);
      if (!section_.is_object()) throw ConfigError(name + ": must be an object");
    }
  }
  template <typename T>
  void read(const std::string& key, T& field) {
    seen_.insert(key);
    if (!section_.contains(key)) return;
    try {
      field = section_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(name_ + "." + key + ": " + e.what());
    }
  }
  void finish() const {
    for (const auto& [k, v] : section_.items())
      if (!seen_.count(k)) throw ConfigError(name_ + "." + k + ": unknown key");
  }

 private:
  std::string name_;
  nlohmann::json section_ = nlohmann::json::object();
  std::set<std::string> seen_;
};

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  static const std::set<std::string> top{"seed", "enumeration_cap", "domain", "policy", "data",
                                         "reward", "dpo", "rlhf", "eval"};
  for (const auto& [k, v] : j.items())
    if (!top.count(k)) throw ConfigError(k + ": unknown key");
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("enumeration_cap")) c.enumeration_cap = j.at("enumeration_cap").get<double>();
  SectionReader d(j, "domain");
  d.read("with_stay", c.domain.with_stay);
  d.read("max_len", c.domain.max_len);
  d.read("prompts", c.domain.prompts);
  d.read("max_moves", c.domain.max_moves);
  d.read("prompt_seed", c.domain.prompt_seed);
  d.finish();
  SectionReader p(j, "policy");
  p.read("kind", c.policy.kind);
  p.read("window", c.policy.window);
  p.read("hidden", c.policy.hidden);
  p.read("init_std", c.policy.init_std);
  p.read("seed", c.policy.seed);
  p.finish();
  SectionReader da(j, "data");
  da.read("pairs", c.data.pairs);
  da.read("temperature", c.data.temperature);
  da.read("test_fraction", c.data.test_fraction);
  da.read("sharpness", c.data.sharpness);
  da.read("thresholds", c.data.thresholds);
  da.read("skip_below", c.data.skip_below);
  da.read("degrees", c.data.degrees);
  da.read("fraction", c.data.fraction);
  da.finish();
  SectionReader r(j, "reward");
  r.read("arch", c.reward.arch);
  r.read("features", c.reward.features);
  r.read("hidden", c.reward.hidden);
  r.read("epochs", c.reward.epochs);
  r.read("batch", c.reward.batch);
  r.read("lr", c.reward.lr);
  r.read("margins", c.reward.margins);
  r.read("use_margins", c.reward.use_margins);
  r.read("l2", c.reward.l2);
  r.read("normalize", c.reward.normalize);
  r.finish();
  SectionReader dp(j, "dpo");
  dp.read("beta", c.dpo.beta);
  dp.read("variant", c.dpo.variant);
  dp.read("label_smoothing", c.dpo.label_smoothing);
  dp.read("kto_reference", c.dpo.kto_reference);
  dp.read("epochs", c.dpo.epochs);
  dp.read("batch", c.dpo.batch);
  dp.read("optimizer", c.dpo.optimizer);
  dp.read("lr", c.dpo.lr);
  dp.read("momentum", c.dpo.momentum);
  dp.finish();
  SectionReader rl(j, "rlhf");
  rl.read("kl_coeff", c.rlhf.kl_coeff);
  rl.read("kl_mode", c.rlhf.kl_mode);
  rl.read("target_kl", c.rlhf.target_kl);
  rl.read("batch_prompts", c.rlhf.batch_prompts);
  rl.read("steps", c.rlhf.steps);
  rl.read("temperature", c.rlhf.temperature);
  rl.read("whiten_advantages", c.rlhf.whiten_advantages);
  rl.read("reward_scaling", c.rlhf.reward_scaling);
  rl.read("clip", c.rlhf.clip);
  rl.read("ppo_epochs", c.rlhf.ppo_epochs);
  rl.read("value_weight", c.rlhf.value_weight);
  rl.read("lr", c.rlhf.lr);
  rl.read("value_lr", c.rlhf.value_lr);
  rl.read("lr_final_fraction", c.rlhf.lr_final_fraction);
  rl.read("reward", c.rlhf.reward);
  rl.read("spike_kl_factor", c.rlhf.spike_kl_factor);
  rl.read("spike_reward_factor", c.rlhf.spike_reward_factor);
  rl.read("spike_kl_floor", c.rlhf.spike_kl_floor);
  rl.read("spike_reward_floor", c.rlhf.spike_reward_floor);
  rl.read("spike_window", c.rlhf.spike_window);
  rl.finish();
  SectionReader e(j, "eval");
  e.read("temperatures", c.eval.temperatures);
  e.read("comparisons", c.eval.comparisons);
  e.read("tie_band", c.eval.tie_band);
  e.read("pool_size", c.eval.pool_size);
  e.read("mm_per_prompt", c.eval.mm_per_prompt);
  e.read("diversity_pairs", c.eval.diversity_pairs);
  e.read("min_gap", c.eval.min_gap);
  e.finish();
  c.validate();
  return c;
}

SyntheticLabelConfig label_config(const ExperimentConfig& cfg) {
  SyntheticLabelConfig l;
  l.thresholds.cutoffs = cfg.data.thresholds;
  l.sharpness = cfg.data.sharpness;
  l.skip_below = cfg.data.skip_below;
  return l;
}

DpoConfig dpo_config(const ExperimentConfig& cfg) {
  DpoConfig d;
  d.beta = cfg.dpo.beta;
  d.variant = dpo_variant_from_name(cfg.dpo.variant);
  d.label_smoothing = cfg.dpo.label_smoothing;
  d.kto_reference = cfg.dpo.kto_reference;
  return d;
}

DpoTrainConfig dpo_train_config(const ExperimentConfig& cfg) {
  DpoTrainConfig t;
  t.epochs = cfg.dpo.epochs;
  t.batch_size = cfg.dpo.batch;
  t.optimizer.kind = cfg.dpo.optimizer == "sgd" ? OptimizerKind::Sgd : OptimizerKind::Momentum;
  t.optimizer.lr = cfg.dpo.lr;
  t.optimizer.momentum = cfg.dpo.momentum;
  t.seed = derive_seed(cfg.seed, 0x64706fULL);
  return t;
}

RewardTrainConfig reward_train_config(const ExperimentConfig& cfg) {
  RewardTrainConfig r;
  r.epochs = cfg.reward.epochs;
  r.batch_size = cfg.reward.batch;
  r.optimizer = {OptimizerKind::Momentum, cfg.reward.lr};
  r.margins = {cfg.reward.margins[0], cfg.reward.margins[1], cfg.reward.margins[2], cfg.reward.margins[3]};
  r.use_margins = cfg.reward.use_margins;
  r.l2 = cfg.reward.l2;
  r.normalize = cfg.reward.normalize;
  r.seed = derive_seed(cfg.seed, 0x726577ULL);
  return r;
}

RlhfConfig rlhf_config(const ExperimentConfig& cfg) {
  RlhfConfig r;
  r.kl_coeff = cfg.rlhf.kl_coeff;
  r.kl_mode = kl_mode_from_name(cfg.rlhf.kl_mode);
  r.target_kl = cfg.rlhf.target_kl;
  r.batch_prompts = cfg.rlhf.batch_prompts;
  r.steps = cfg.rlhf.steps;
  r.temperature = cfg.rlhf.temperature;
  r.whiten_advantages = cfg.rlhf.whiten_advantages;
  r.reward_scaling = reward_scaling_from_name(cfg.rlhf.reward_scaling);
  r.clip_ratio = cfg.rlhf.clip;
  r.ppo_epochs = cfg.rlhf.ppo_epochs;
  r.value_loss_weight = cfg.rlhf.value_weight;
  r.policy_optimizer = {OptimizerKind::Adam, cfg.rlhf.lr};
  r.value_optimizer = {OptimizerKind::Adam, cfg.rlhf.value_lr};
  r.lr_final_fraction = cfg.rlhf.lr_final_fraction;
  r.seed = derive_seed(cfg.seed, 0x726c6866ULL);
  return r;
}

SpikeThresholds spike_thresholds(const ExperimentConfig& cfg) {
  SpikeThresholds t;
  t.kl_factor = cfg.rlhf.spike_kl_factor;
  t.reward_factor = cfg.rlhf.spike_reward_factor;
  t.kl_floor = cfg.rlhf.spike_kl_floor;
  t.reward_floor = cfg.rlhf.spike_reward_floor;
  t.window = cfg.rlhf.spike_window;
  t.min_history = std::min<std::size_t>(5, t.window);
  return t;
}

EvalConfig eval_config(const ExperimentConfig& cfg, double temperature) {
  EvalConfig e;
  e.temperature = temperature;
  e.comparisons = cfg.eval.comparisons;
  e.tie_band = cfg.eval.tie_band;
  e.mm_per_prompt = cfg.eval.mm_per_prompt;
  e.diversity_pairs = cfg.eval.diversity_pairs;
  e.pool_size = cfg.eval.pool_size;
  e.seed = derive_seed(cfg.seed, 0x6576616cULL);
  return e;
}

std::set<Degree> parse_degrees(const std::string& list) {
  std::set<Degree> out;
  if (list == "all") return {kAllDegrees.begin(), kAllDegrees.end()};
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.insert(degree_from_name(item));
  }
  if (out.empty()) throw ConfigError("degree list is empty");
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

Domain make_domain(const ExperimentConfig& cfg) {
  cfg.validate();
  Domain d{Vocab::motion(cfg.domain.with_stay), cfg.domain.max_len, {}};
  d.prompts = gen_unique_prompts(cfg.domain.prompt_seed, cfg.domain.prompts, cfg.domain.max_moves);
  return d;
}

Policy make_reference(const ExperimentConfig& cfg, const Domain& domain) {
  if (cfg.policy.kind == "tabular") return Policy::tabular(domain.vocab, domain.max_len);
  return Policy::neural(domain.vocab, domain.max_len, {cfg.policy.window, cfg.policy.hidden}, cfg.policy.seed,
                        cfg.policy.init_std);
}

ScoreFn truth_judge(const Vocab& vocab) {
  return [vocab](const Prompt& p, const TokenSeq& y) { return truth_score(vocab, p, y); };
}

PrefDataset generate_pairs(const ExperimentConfig& cfg, const Domain& domain, const Policy& generator) {
  const auto judge = truth_judge(domain.vocab);
  const auto lc = label_config(cfg);
  const std::uint64_t base = derive_seed(cfg.seed, 0x64617461ULL);
  PrefDataset ds;
  ds.pairs.reserve(cfg.data.pairs);
  for (std::size_t i = 0; i < cfg.data.pairs; ++i) {
    const Prompt& p = domain.prompts[i % domain.prompts.size()];
    const std::array<std::uint64_t, 2> seeds{derive_seed(base, i, 1), derive_seed(base, i, 2)};
    const TokenSeq y1 = sample(generator, p, cfg.data.temperature, seeds[0]);
    const TokenSeq y2 = sample(generator, p, cfg.data.temperature, seeds[1]);
    ds.pairs.push_back(label_pair_synthetic(p, y1, y2, judge, lc, derive_seed(base, i, 3), seeds));
  }
  ds.manifest_digest = hex_digest(fnv1a(to_json(cfg).dump()));
  return ds;
}

std::pair<PrefDataset, PrefDataset> split_pairs(const ExperimentConfig& cfg, const PrefDataset& all) {
  return split(all, cfg.data.test_fraction, derive_seed(cfg.seed, 0x73706cULL));
}

PrefDataset training_view(const ExperimentConfig& cfg, const PrefDataset& train) {
  return filter(train, parse_degrees(cfg.data.degrees), cfg.data.fraction, derive_seed(cfg.seed, 0x66696cULL));
}

RankingRun run_ranking(const ExperimentConfig& cfg) {
  const Domain domain = make_domain(cfg);
  const Policy ref = make_reference(cfg, domain);
  const PrefDataset all = generate_pairs(cfg, domain, ref);
  auto [train_all, test] = split_pairs(cfg, all);
  // Model selection uses a slice of the training split; the test split stays
  // untouched until the agreement measurement.
  auto [fit, val] = split(training_view(cfg, train_all), 0.1, derive_seed(cfg.seed, 0x76616cULL));
  RankingRun run{0.0, 0.0, 0, train_dpo(ref, ref, fit, val, dpo_config(cfg), dpo_train_config(cfg)), {}};
  const auto judge = truth_judge(domain.vocab);
  const auto held = training_pairs(test).pairs;
  const auto a = ranking_agreement(run.training.best_policy, ref, held, judge, cfg.eval.min_gap);
  run.agreement = a.agreement;
  run.heldout = a.n;
  run.reference_agreement = ranking_agreement(ref, ref, held, judge, cfg.eval.min_gap).agreement;
  run.test = std::move(test);
  return run;
}

// ---------------------------------------------------------------------------
// Output helpers

JsonlWriter::JsonlWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) throw Error("cannot open " + path.string() + " for writing");
}

void JsonlWriter::write(const ojson& record) {
  out_ << record.dump() << '\n';
  out_.flush();
  if (!out_) throw Error("failed writing " + path_.string());
}

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, e.what());
    }
  }
  return out;
}

ojson to_json(const RunManifest& m) {
  ojson j;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  j["seeds"] = m.seeds;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["config"] = m.config;
  return j;
}

void write_manifest(RunManifest m, const std::filesystem::path& dir) {
  for (auto& [path, digest] : m.outputs)
    if (digest.empty() && std::filesystem::exists(path)) digest = file_digest(path);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw Error("cannot write manifest in " + dir.string());
  out << to_json(m).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Sweeps

double t_confidence_halfwidth(const std::vector<double>& xs) {
  static constexpr double kT975[] = {0.0, 12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228};
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  const std::size_t df = xs.size() - 1;
  const double t = df < std::size(kT975) ? kT975[df] : 1.96;
  return t * sd / std::sqrt(static_cast<double>(xs.size()));
}

ExperimentConfig apply_axis(const ExperimentConfig& cfg, const std::string& axis, const std::string& value) {
  ExperimentConfig c = cfg;
  auto number = [&] {
    try {
      std::size_t pos = 0;
      const double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      return v;
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + value + "' for axis " + axis + " is not a number");
    }
  };
  if (axis == "beta") c.dpo.beta = number();
  else if (axis == "loss") c.dpo.variant = dpo_variant_name(dpo_variant_from_name(value));
  else if (axis == "data-fraction") c.data.fraction = number();
  else if (axis == "degrees") c.data.degrees = value;
  else if (axis == "temperature") c.eval.temperatures = {number()};
  else throw ConfigError("unknown sweep axis '" + axis + "'");
  c.validate();
  return c;
}

SweepTable run_sweep(const ExperimentConfig& base, const std::string& axis, const std::vector<std::string>& values,
                     const std::vector<std::uint64_t>& seeds, const std::function<void(const std::string&)>& progress) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (seeds.empty()) throw ConfigError("sweep needs at least one seed");
  SweepTable t;
  t.axis = axis;
  t.metric = axis == "temperature" ? "win_rate" : "ranking_agreement";
  t.seeds = seeds;
  // Temperature only changes evaluation, so train once per seed.
  std::map<std::uint64_t, Policy> trained;
  for (const auto& value : values) {
    SweepCell cell;
    cell.value = value;
    for (std::uint64_t seed : seeds) {
      try {
        ExperimentConfig c = apply_axis(base, axis, value);
        c.seed = seed;
        double metric = 0.0;
        if (axis == "temperature") {
          auto it = trained.find(seed);
          if (it == trained.end()) it = trained.emplace(seed, run_ranking(c).training.best_policy).first;
          const Domain domain = make_domain(c);
          const Policy ref = make_reference(c, domain);
          metric = win_rate(it->second, ref, domain.prompts, truth_judge(domain.vocab), c.eval.temperatures.front(),
                            c.eval.comparisons, c.eval.tie_band, derive_seed(seed, 0x77696eULL))
                       .win;
        } else {
          metric = run_ranking(c).agreement;
        }
        cell.per_seed.push_back(metric);
        if (progress) progress(axis + "=" + value + " seed=" + std::to_string(seed) + " -> " + std::to_string(metric));
      } catch (const std::exception& e) {
        cell.failures.push_back("seed " + std::to_string(seed) + ": " + e.what());
        if (progress) progress(axis + "=" + value + " seed=" + std::to_string(seed) + " failed: " + e.what());
      }
    }
    if (!cell.per_seed.empty()) {
      cell.mean = mean(cell.per_seed);
      cell.ci95 = t_confidence_halfwidth(cell.per_seed);
    }
    t.cells.push_back(std::move(cell));
  }
  return t;
}

ojson to_json(const SweepTable& t) {
  ojson j;
  j["axis"] = t.axis;
  j["metric"] = t.metric;
  j["seeds"] = t.seeds;
  auto rows = ojson::array();
  for (const auto& c : t.cells) {
    ojson r;
    r["value"] = c.value;
    r["mean"] = c.mean;
    r["ci95"] = c.ci95;
    r["per_seed"] = c.per_seed;
    r["failures"] = c.failures;
    rows.push_back(std::move(r));
  }
  j["rows"] = std::move(rows);
  return j;
}

std::string render_table(const SweepTable& t) {
  std::ostringstream os;
  os << std::left << std::setw(28) << t.axis << std::setw(12) << t.metric << "  95% CI    seeds  failures\n";
  os << std::string(70, '-') << '\n';
  for (const auto& c : t.cells) {
    os << std::left << std::setw(28) << c.value << std::fixed << std::setprecision(4) << std::setw(12) << c.mean
       << "  +-" << std::setw(7) << c.ci95 << std::setw(7) << c.per_seed.size() << c.failures.size() << '\n';
  }
  return os.str();
}

}  // namespace preflab
