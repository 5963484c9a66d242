#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <future>
#include <iomanip>
#include <sstream>
#include <ostream>
#include <thread>

#include "preflab/annotation.hpp"
#include "preflab/annotation_http.hpp"
#include "preflab/cli/app.hpp"
#include "preflab/error.hpp"
#include "preflab/hash.hpp"
#include "preflab/random.hpp"
#include "preflab/verify.hpp"

#ifndef PREFLAB_ASSET_DIR
#define PREFLAB_ASSET_DIR "assets/annotation"
#endif

namespace preflab::cli {

using ojson = nlohmann::ordered_json;

namespace {

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
}

RunManifest manifest_for(const Context& ctx) {
  RunManifest m;
  m.command = ctx.command;
  m.config = to_json(ctx.cfg);
  m.seeds = {{"seed", ctx.cfg.seed}, {"policy", ctx.cfg.policy.seed}, {"prompts", ctx.cfg.domain.prompt_seed}};
  return m;
}

void add_input(RunManifest& m, const fs::path& p) { m.inputs[p.string()] = file_digest(p); }
void add_output(RunManifest& m, const fs::path& p) { m.outputs[p.string()] = ""; }

void write_json(const fs::path& path, const ojson& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

PrefDataset load_split(const fs::path& dir, const std::string& name, const Domain& d, RunManifest& m) {
  const fs::path p = dir / name;
  if (!fs::exists(p)) throw Error("missing dataset file " + p.string());
  add_input(m, p);
  return load_dataset(p, d.vocab, d.max_len);
}

void check_compatible(const Policy& p, const Domain& d, const fs::path& src) {
  if (p.vocab().size() != d.vocab.size() || p.max_len() != d.max_len)
    throw ConfigError(src.string() + ": checkpoint vocabulary or max length does not match domain-with-stay / " +
                      "domain-max-len");
}

Policy load_checked(const fs::path& path, const Domain& d, RunManifest& m) {
  add_input(m, path);
  Policy p = load_policy(path);
  check_compatible(p, d, path);
  return p;
}

std::string fmt(double x, int precision = 4) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(precision) << x;
  return s.str();
}

ojson to_json(const RewardEpoch& e) {
  ojson j;
  j["epoch"] = e.epoch;
  j["train_loss"] = e.train_loss;
  j["val_loss"] = e.val_loss;
  j["val_accuracy"] = e.val_accuracy;
  return j;
}

ojson to_json(const OverfitReport& r) {
  ojson j;
  j["final_train_loss"] = r.final_train_loss;
  j["min_val_loss"] = r.min_val_loss;
  j["final_val_loss"] = r.final_val_loss;
  j["generalization_gap"] = r.generalization_gap;
  j["turning_point"] = r.turning_point;
  j["overfit"] = r.overfit;
  return j;
}

}  // namespace

std::string flat_config(const ExperimentConfig& cfg) {
  std::ostringstream s;
  auto key = [](std::string k) {
    std::replace(k.begin(), k.end(), '_', '-');
    return k;
  };
  const ojson j = to_json(cfg);
  for (const auto& [name, value] : j.items()) {
    if (!value.is_object()) {
      s << key(name) << " = " << value.dump() << '\n';
      continue;
    }
    for (const auto& [field, v] : value.items()) s << key(name + "-" + field) << " = " << v.dump() << '\n';
  }
  return s.str();
}

namespace {

// The resolved config goes next to the manifest so that
// `preflab --config <dir>/config.toml <command>` repeats the run.
void finish_run(const Context& ctx, RunManifest& m, const fs::path& dir) {
  std::ofstream(dir / "config.toml", std::ios::binary) << flat_config(ctx.cfg);
  add_output(m, dir / "config.toml");
  write_manifest(m, dir);
}

// Fit/validation carve of a training split, shared by reward and DPO.
std::pair<PrefDataset, PrefDataset> fit_val(const ExperimentConfig& cfg, const PrefDataset& train) {
  return split(training_view(cfg, train), 0.1, derive_seed(cfg.seed, 0x76616cULL));
}

}  // namespace

// ---------------------------------------------------------------------------

int cmd_gen_data(const Context& ctx, const GenDataArgs& a) {
  const auto& cfg = ctx.cfg;
  RunManifest m = manifest_for(ctx);
  const Domain domain = make_domain(cfg);
  const Policy generator = a.generator ? load_checked(*a.generator, domain, m) : make_reference(cfg, domain);
  const PrefDataset all = generate_pairs(cfg, domain, generator);
  auto [train, test] = split_pairs(cfg, all);
  make_dir(a.out);
  save_dataset(train, a.out / "train.jsonl", domain.vocab);
  save_dataset(test, a.out / "test.jsonl", domain.vocab);
  add_output(m, a.out / "train.jsonl");
  add_output(m, a.out / "test.jsonl");
  finish_run(ctx, m, a.out);

  auto& out = *ctx.out;
  out << "generated " << all.size() << " pairs at temperature " << cfg.data.temperature << " (train " << train.size()
      << ", test " << test.size() << ")\n";
  for (const auto& [d, n] : degree_histogram(all)) out << "  " << std::left << std::setw(18) << degree_name(d) << n << '\n';
  out << "wrote " << a.out.string() << '\n';
  return kExitOk;
}

int cmd_train_reward(const Context& ctx, const TrainArgs& a) {
  const auto& cfg = ctx.cfg;
  RunManifest m = manifest_for(ctx);
  const Domain domain = make_domain(cfg);
  const PrefDataset train = load_split(a.data, "train.jsonl", domain, m);
  auto [fit, val] = fit_val(cfg, train);
  fit = training_pairs(fit);
  if (a.max_pairs && fit.size() > *a.max_pairs) fit.pairs.resize(*a.max_pairs);

  const FeatureMap features = cfg.reward.features == "expressive" ? FeatureMap::Expressive : FeatureMap::Handcrafted;
  RewardModel init = cfg.reward.arch == "linear"
                         ? RewardModel::linear(domain.vocab, domain.max_len, features)
                         : RewardModel::tiny_neural(domain.vocab, domain.max_len, features, cfg.reward.hidden,
                                                    derive_seed(cfg.seed, 0x726d69ULL), 0.1);
  const RewardTrainResult res = train_reward(std::move(init), fit, val, reward_train_config(cfg));

  make_dir(a.out);
  {
    JsonlWriter log(a.out / "metrics.jsonl");
    for (const auto& e : res.log.epochs) log.write(to_json(e));
  }
  save_reward_model(res.best_model, a.out / "reward.json");
  save_reward_model(res.final_model, a.out / "reward_final.json");
  const OverfitReport of = overfit_report(res.log);
  ojson summary;
  summary["train_pairs"] = fit.size();
  summary["val_pairs"] = training_pairs(val).size();
  summary["best_epoch"] = res.best_epoch;
  summary["overfit_report"] = to_json(of);
  if (fs::exists(a.data / "test.jsonl")) {
    const auto test = training_pairs(load_split(a.data, "test.jsonl", domain, m));
    if (!test.empty()) summary["test_accuracy"] = reward_accuracy(res.best_model, test.pairs);
  }
  write_json(a.out / "summary.json", summary);
  for (const char* f : {"metrics.jsonl", "reward.json", "reward_final.json", "summary.json"}) add_output(m, a.out / f);
  finish_run(ctx, m, a.out);

  auto& out = *ctx.out;
  out << "reward model: " << fit.size() << " training pairs, best epoch " << res.best_epoch << '\n';
  out << "  final train loss " << fmt(of.final_train_loss) << ", val loss min " << fmt(of.min_val_loss) << " / final "
      << fmt(of.final_val_loss) << (of.overfit ? "  [overfit]" : "") << '\n';
  if (summary.contains("test_accuracy"))
    out << "  test accuracy " << fmt(summary["test_accuracy"].get<double>()) << '\n';
  out << "wrote " << a.out.string() << '\n';
  return kExitOk;
}

int cmd_train_dpo(const Context& ctx, const TrainArgs& a) {
  const auto& cfg = ctx.cfg;
  RunManifest m = manifest_for(ctx);
  const Domain domain = make_domain(cfg);
  const Policy ref = make_reference(cfg, domain);
  const PrefDataset train = load_split(a.data, "train.jsonl", domain, m);
  const PrefDataset test = load_split(a.data, "test.jsonl", domain, m);
  Policy init = a.init ? load_checked(*a.init, domain, m) : ref;
  auto [fit, val] = fit_val(cfg, train);
  DpoTrainConfig tc = dpo_train_config(cfg);
  tc.log_steps = a.log_steps;
  const DpoTrainResult res = train_dpo(std::move(init), ref, fit, val, dpo_config(cfg), tc);

  make_dir(a.out);
  {
    JsonlWriter log(a.out / "metrics.jsonl");
    for (const auto& e : res.log) log.write(to_json(e));
  }
  save_policy(res.best_policy, a.out / "policy.json");
  save_policy(res.final_policy, a.out / "policy_final.json");

  ojson summary;
  summary["train_pairs"] = training_pairs(fit).size();
  summary["val_pairs"] = training_pairs(val).size();
  summary["best_epoch"] = res.best_epoch;
  const auto judge = truth_judge(domain.vocab);
  const auto held = training_pairs(test).pairs;
  try {
    const auto agree = ranking_agreement(res.best_policy, ref, held, judge, cfg.eval.min_gap);
    summary["heldout_agreement"] = agree.agreement;
    summary["reference_agreement"] = ranking_agreement(ref, ref, held, judge, cfg.eval.min_gap).agreement;
    summary["heldout_pairs"] = agree.n;
  } catch (const EmptyDatasetError&) {
    summary["heldout_pairs"] = 0;
  }
  write_json(a.out / "summary.json", summary);
  for (const char* f : {"metrics.jsonl", "policy.json", "policy_final.json", "summary.json"}) add_output(m, a.out / f);
  finish_run(ctx, m, a.out);

  auto& out = *ctx.out;
  out << "dpo (" << cfg.dpo.variant << ", beta " << cfg.dpo.beta << "): " << summary["train_pairs"].get<std::size_t>()
      << " training pairs, best epoch " << res.best_epoch << '\n';
  if (summary.contains("heldout_agreement"))
    out << "  held-out ranking agreement " << fmt(summary["heldout_agreement"].get<double>()) << " (reference "
        << fmt(summary["reference_agreement"].get<double>()) << ", n = " << summary["heldout_pairs"].get<std::size_t>()
        << ")\n";
  out << "wrote " << a.out.string() << '\n';
  return kExitOk;
}

int cmd_train_rlhf(const Context& ctx, const TrainArgs& a) {
  const auto& cfg = ctx.cfg;
  RunManifest m = manifest_for(ctx);
  const Domain domain = make_domain(cfg);
  const Policy ref = make_reference(cfg, domain);
  Policy init = a.init ? load_checked(*a.init, domain, m) : ref;

  RewardFn reward;
  std::shared_ptr<RewardModel> model;
  if (cfg.rlhf.reward == "truth") {
    reward = truth_judge(domain.vocab);
  } else {
    if (!a.reward_model) throw ConfigError("rlhf-reward = model needs --reward-model");
    add_input(m, *a.reward_model);
    model = std::make_shared<RewardModel>(load_reward_model(*a.reward_model));
    if (model->vocab().size() != domain.vocab.size() || model->max_len() != domain.max_len)
      throw ConfigError(a.reward_model->string() + ": reward model does not match the domain");
    reward = [model](const Prompt& p, const TokenSeq& y) { return (*model)(p, y); };
  }

  make_dir(a.out);
  RlhfTrainer trainer(std::move(init), ref, reward, rlhf_config(cfg));
  SpikeMonitor monitor(spike_thresholds(cfg));
  JsonlWriter metrics(a.out / "metrics.jsonl");
  JsonlWriter alerts(a.out / "alerts.jsonl");
  StepStats last;
  auto& out = *ctx.out;
  trainer.train(domain.prompts, [&](const StepResult& r) {
    metrics.write(to_json(r.stats));
    for (const auto& alert : monitor.observe(r.stats, r.samples)) {
      alerts.write(to_json(alert, domain.vocab));
      out << "  alert at step " << alert.step << ": " << alert.metric << " " << fmt(alert.value) << " vs trailing median "
          << fmt(alert.trailing_median) << '\n';
    }
    last = r.stats;
  });
  save_policy(trainer.policy(), a.out / "policy.json");

  ojson summary;
  summary["steps"] = trainer.steps_done();
  summary["final"] = to_json(last);
  summary["alerts"] = monitor.alerts().size();
  write_json(a.out / "summary.json", summary);
  for (const char* f : {"metrics.jsonl", "alerts.jsonl", "policy.json", "summary.json"}) add_output(m, a.out / f);
  finish_run(ctx, m, a.out);

  out << "rlhf: " << trainer.steps_done() << " steps, final mean reward " << fmt(last.mean_reward) << ", mean KL "
      << fmt(last.mean_kl) << ", " << monitor.alerts().size() << " alert(s)\n";
  out << "wrote " << a.out.string() << '\n';
  return kExitOk;
}

int cmd_evaluate(const Context& ctx, const EvaluateArgs& a) {
  const auto& cfg = ctx.cfg;
  RunManifest m = manifest_for(ctx);
  const Domain domain = make_domain(cfg);
  const Policy ref = make_reference(cfg, domain);
  const Policy policy = load_checked(a.policy, domain, m);
  const Policy baseline = a.baseline ? load_checked(*a.baseline, domain, m) : ref;
  const auto judge = truth_judge(domain.vocab);

  make_dir(a.out);
  JsonlWriter metrics(a.out / "metrics.jsonl");
  auto& out = *ctx.out;
  out << "temperature  win    tie    loss   score  diversity  frechet  mm      top-1  top-3\n";
  for (double t : cfg.eval.temperatures) {
    const EvalReport r = evaluate(policy, baseline, domain.prompts, judge, eval_config(cfg, t));
    metrics.write(to_json(r));
    out << std::left << std::setw(13) << fmt(t, 2) << std::setw(7) << fmt(r.vs_baseline.win, 3) << std::setw(7)
        << fmt(r.vs_baseline.tie, 3) << std::setw(7) << fmt(r.vs_baseline.loss, 3) << std::setw(7)
        << fmt(r.mean_score, 3) << std::setw(11) << fmt(r.diversity, 3) << std::setw(9) << fmt(r.frechet, 3)
        << std::setw(8) << fmt(r.multimodality, 3) << std::setw(7) << fmt(r.retrieval.precision.front(), 3)
        << fmt(r.retrieval.precision.back(), 3) << '\n';
  }
  if (a.data) {
    const auto test = training_pairs(load_split(*a.data, "test.jsonl", domain, m));
    const auto agree = ranking_agreement(policy, baseline, test.pairs, judge, cfg.eval.min_gap);
    ojson j;
    j["metric"] = "ranking_agreement";
    j["agreement"] = agree.agreement;
    j["n"] = agree.n;
    metrics.write(j);
    out << "ranking agreement " << fmt(agree.agreement) << " (n = " << agree.n << ")\n";
  }
  add_output(m, a.out / "metrics.jsonl");
  finish_run(ctx, m, a.out);
  out << "wrote " << a.out.string() << '\n';
  return kExitOk;
}

int cmd_sweep(const Context& ctx, const SweepArgs& a) {
  RunManifest m = manifest_for(ctx);
  m.config["sweep"] = {{"axis", a.axis}, {"values", a.values}, {"seeds", a.seeds}};
  auto& out = *ctx.out;
  SweepTable table;
  if (a.jobs <= 1 || a.values.size() == 1) {
    table = run_sweep(ctx.cfg, a.axis, a.values, a.seeds, [&](const std::string& s) { out << "  " << s << '\n'; });
  } else {
    // Each value is an independent seeded run; threads only change wall time.
    std::vector<std::future<SweepTable>> parts;
    std::vector<SweepTable> done;
    for (std::size_t i = 0; i < a.values.size(); ++i) {
      if (parts.size() == a.jobs) {
        done.push_back(parts.front().get());
        parts.erase(parts.begin());
      }
      parts.push_back(std::async(std::launch::async, [&, i] {
        return run_sweep(ctx.cfg, a.axis, {a.values[i]}, a.seeds);
      }));
    }
    for (auto& f : parts) done.push_back(f.get());
    table = done.front();
    table.cells.clear();
    for (auto& part : done) table.cells.push_back(std::move(part.cells.front()));
  }
  make_dir(a.out);
  write_json(a.out / "sweep.json", to_json(table));
  {
    std::ofstream t(a.out / "table.md", std::ios::binary);
    t << render_table(table);
  }
  add_output(m, a.out / "sweep.json");
  add_output(m, a.out / "table.md");
  finish_run(ctx, m, a.out);
  out << render_table(table);
  out << "wrote " << a.out.string() << '\n';
  return kExitOk;
}

int cmd_verify(const Context& ctx, const VerifyArgs& a) {
  RunManifest m = manifest_for(ctx);
  VerifyOptions opts;
  opts.ipo_target = a.ipo_target;
  opts.gradient_configs = a.gradient_configs;
  opts.rlhf_steps = a.rlhf_steps;
  opts.seed = ctx.cfg.seed;
  auto& out = *ctx.out;
  const auto checks = run_verification(opts, [&](const CheckResult& c) { out << format_check(c) << '\n'; });
  make_dir(a.out);
  {
    JsonlWriter log(a.out / "checks.jsonl");
    for (const auto& c : checks) log.write(to_json(c));
  }
  add_output(m, a.out / "checks.jsonl");
  finish_run(ctx, m, a.out);
  const auto failed = std::count_if(checks.begin(), checks.end(), [](const CheckResult& c) { return !c.passed; });
  out << (checks.size() - failed) << "/" << checks.size() << " checks passed\n";
  return failed == 0 ? kExitOk : kExitVerifyFailed;
}

int cmd_oracle(const Context& ctx, const OracleArgs& a) {
  const auto& cfg = ctx.cfg;
  RunManifest m = manifest_for(ctx);
  const Domain domain = make_domain(cfg);
  if (a.prompt_index >= domain.prompts.size())
    throw ConfigError("--prompt-index must be below domain-prompts (" + std::to_string(domain.prompts.size()) + ")");
  const Prompt& prompt = domain.prompts[a.prompt_index];
  const Policy ref = make_reference(cfg, domain);
  const double beta = a.beta.value_or(cfg.rlhf.kl_coeff);
  OracleTable table = optimal_policy(ref, truth_judge(domain.vocab), beta, prompt, cfg.enumeration_cap);
  std::optional<Policy> policy;
  if (a.policy) {
    policy = load_checked(*a.policy, domain, m);
    attach_policy(table, *policy);
  }
  make_dir(a.out);
  {
    std::ofstream tsv(a.out / "oracle.tsv", std::ios::binary);
    write_oracle_tsv(table, domain.vocab, tsv);
  }
  auto expect = [&](const SeqDistribution& d) {
    double e = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) e += d.prob(i) * table.reward[i];
    return e;
  };
  ojson summary;
  summary["prompt"] = prompt.text;
  summary["beta"] = beta;
  summary["support"] = table.support.size();
  summary["log_z"] = table.log_z;
  summary["reference_reward"] = expect(table.ref());
  summary["optimal_reward"] = expect(table.optimal());
  summary["kl_optimal_reference"] = exact_kl(table.optimal(), table.ref());
  if (policy) {
    summary["policy_reward"] = expect(table.policy());
    summary["kl_policy_optimal"] = exact_kl(table.policy(), table.optimal());
  }
  write_json(a.out / "summary.json", summary);
  add_output(m, a.out / "oracle.tsv");
  add_output(m, a.out / "summary.json");
  finish_run(ctx, m, a.out);

  auto& out = *ctx.out;
  out << "prompt: " << prompt.text << "\n";
  out << "  " << table.support.size() << " sequences, beta " << beta << ", log Z " << fmt(table.log_z, 6) << '\n';
  out << "  expected reward: reference " << fmt(summary["reference_reward"].get<double>()) << ", optimal "
      << fmt(summary["optimal_reward"].get<double>()) << '\n';
  if (policy)
    out << "  policy: expected reward " << fmt(summary["policy_reward"].get<double>()) << ", KL to optimal "
        << fmt(summary["kl_policy_optimal"].get<double>(), 6) << '\n';
  out << "wrote " << a.out.string() << '\n';
  return kExitOk;
}

namespace {
std::atomic<bool> g_interrupted{false};
extern "C" void on_signal(int) { g_interrupted.store(true); }
}  // namespace

int cmd_serve_annotation(const Context& ctx, const ServeArgs& a) {
  const auto& cfg = ctx.cfg;
  RunManifest m = manifest_for(ctx);
  const Domain domain = make_domain(cfg);
  make_dir(a.out);

  AnnotationConfig ac;
  ac.vocab = domain.vocab;
  ac.max_len = domain.max_len;
  ac.seed = cfg.seed;
  ac.dataset_path = a.out / "labels.jsonl";
  ac.labelers = a.labelers;
  AnnotationServer server(ac);

  std::size_t added = 0;
  if (a.tasks_from) {
    add_input(m, *a.tasks_from);
    const PrefDataset ds = load_dataset(*a.tasks_from, domain.vocab, domain.max_len);
    // Stored pairs are ordered chosen/rejected; flip a seeded coin so the
    // canonical a/b slots do not reveal the earlier label.
    Rng rng(derive_seed(cfg.seed, 0x666c6970ULL));
    for (const auto& p : ds.pairs) {
      if (p.chosen == p.rejected) continue;
      const bool flip = (rng() & 1ULL) != 0;
      server.add_task(p.prompt, flip ? p.rejected : p.chosen, flip ? p.chosen : p.rejected,
                      flip ? std::array{p.seeds[1], p.seeds[0]} : p.seeds);
      ++added;
    }
  } else {
    const Policy ref = make_reference(cfg, domain);
    const std::uint64_t base = derive_seed(cfg.seed, 0x7461736bULL);
    // The second completion is redrawn until it differs from the first.
    for (std::size_t i = 0; i < a.tasks; ++i) {
      const Prompt& p = domain.prompts[i % domain.prompts.size()];
      std::array<std::uint64_t, 2> seeds{derive_seed(base, i, 1), 0};
      const TokenSeq y1 = sample(ref, p, cfg.data.temperature, seeds[0]);
      for (std::uint64_t k = 2; k < 200; ++k) {
        seeds[1] = derive_seed(base, i, k);
        const TokenSeq y2 = sample(ref, p, cfg.data.temperature, seeds[1]);
        if (y2 == y1) continue;
        server.add_task(p, y1, y2, seeds);
        ++added;
        break;
      }
    }
  }
  const std::size_t recovered = server.recover();

  const fs::path static_dir = a.static_dir.empty() ? fs::path(PREFLAB_ASSET_DIR) : a.static_dir;
  AnnotationHttpService service(server, static_dir);
  const int port = service.bind(a.host, a.port);
  auto& out = *ctx.out;
  out << "serving " << added << " tasks (" << recovered << " labels recovered) on http://" << a.host << ":" << port
      << "/\n"
      << std::flush;

  g_interrupted.store(false);
  auto old_int = std::signal(SIGINT, on_signal);
  auto old_term = std::signal(SIGTERM, on_signal);
  std::atomic<bool> finished{false};
  std::thread watcher([&] {
    const auto start = std::chrono::steady_clock::now();
    while (!finished.load()) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (g_interrupted.load() || (a.exit_after > 0.0 && elapsed >= a.exit_after)) {
        service.stop();
        return;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  service.run();
  finished.store(true);
  watcher.join();
  std::signal(SIGINT, old_int);
  std::signal(SIGTERM, old_term);

  server.close();
  const auto stats = server.stats();
  write_json(a.out / "stats.json", to_json(stats));
  if (fs::exists(ac.dataset_path)) add_output(m, ac.dataset_path);
  add_output(m, a.out / "stats.json");
  finish_run(ctx, m, a.out);
  out << "stopped; " << stats.labels << " labels in " << ac.dataset_path.string() << '\n';
  return kExitOk;
}

int cmd_report(const Context& ctx, const ReportArgs& a) {
  auto& out = *ctx.out;
  ojson all = ojson::array();
  for (const auto& dir : a.runs) {
    const fs::path mf = dir / "manifest.json";
    if (!fs::exists(mf)) throw Error(dir.string() + " has no manifest.json");
    std::ifstream in(mf);
    const ojson manifest = ojson::parse(in);
    ojson entry;
    entry["run"] = dir.string();
    entry["command"] = manifest.at("command");
    entry["tool_version"] = manifest.at("tool_version");
    std::ifstream sin(dir / "summary.json");
    if (sin) entry["summary"] = ojson::parse(sin);
    std::ifstream tin(dir / "table.md");
    std::string table((std::istreambuf_iterator<char>(tin)), std::istreambuf_iterator<char>());
    if (!table.empty()) entry["table"] = table;
    if (fs::exists(dir / "metrics.jsonl")) {
      const auto records = read_jsonl(dir / "metrics.jsonl");
      entry["metrics_records"] = records.size();
      if (!records.empty()) entry["last_metrics"] = records.back();
    }
    if (fs::exists(dir / "checks.jsonl")) {
      std::size_t passed = 0, total = 0;
      for (const auto& c : read_jsonl(dir / "checks.jsonl")) {
        ++total;
        passed += c.at("passed").get<bool>() ? 1 : 0;
      }
      entry["checks"] = {{"passed", passed}, {"total", total}};
    }
    all.push_back(entry);
  }
  if (a.json) {
    out << all.dump(2) << '\n';
    return kExitOk;
  }
  for (const auto& e : all) {
    out << "## " << e["run"].get<std::string>() << "  (" << e["command"].get<std::string>() << ", preflab "
        << e["tool_version"].get<std::string>() << ")\n";
    if (e.contains("summary"))
      for (const auto& [k, v] : e["summary"].items()) out << "  " << k << ": " << v.dump() << '\n';
    if (e.contains("checks"))
      out << "  checks: " << e["checks"]["passed"].dump() << "/" << e["checks"]["total"].dump() << " passed\n";
    if (e.contains("last_metrics"))
      out << "  metrics: " << e["metrics_records"].dump() << " records, last " << e["last_metrics"].dump() << '\n';
    if (e.contains("table")) out << e["table"].get<std::string>();
  }
  return kExitOk;
}

}  // namespace preflab::cli
