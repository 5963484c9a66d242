#include "preflab/cli/app.hpp"

#include <cstdlib>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "preflab/error.hpp"

namespace preflab::cli {

fs::path resolve_data_path(const fs::path& p) {
  if (p.empty() || p.is_absolute()) return p;
  const char* root = std::getenv("PREFLAB_DATA_ROOT");
  if (root == nullptr || *root == '\0') return p;
  return fs::path(root) / p;
}

namespace {

// Array-valued settings are parsed into vectors, then checked for length.
struct ArrayStaging {
  std::vector<double> thresholds;
  std::vector<double> margins;
};

void add_config_options(CLI::App& app, ExperimentConfig& c, ArrayStaging& st) {
  const char* g = "Experiment settings (also accepted as flat keys in --config)";
  auto opt = [&](const std::string& name, auto& field, const std::string& help) {
    return app.add_option(name, field, help)->capture_default_str()->group(g);
  };
  opt("--seed", c.seed, "Run seed");
  opt("--enumeration-cap", c.enumeration_cap, "Largest |V|^L the exact oracle will enumerate");

  opt("--domain-with-stay", c.domain.with_stay, "Include the STAY token");
  opt("--domain-max-len", c.domain.max_len, "Maximum completion length L");
  opt("--domain-prompts", c.domain.prompts, "Number of distinct prompts");
  opt("--domain-max-moves", c.domain.max_moves, "Longest ideal path in a prompt");
  opt("--domain-prompt-seed", c.domain.prompt_seed, "Prompt generator seed");

  opt("--policy-kind", c.policy.kind, "neural or tabular");
  opt("--policy-window", c.policy.window, "Neural context window");
  opt("--policy-hidden", c.policy.hidden, "Neural hidden width");
  opt("--policy-init-std", c.policy.init_std, "Neural init standard deviation");
  opt("--policy-seed", c.policy.seed, "Reference policy init seed");

  opt("--data-pairs,--pairs", c.data.pairs, "Sampled pairs, skipped ones included");
  opt("--data-temperature,--temperature", c.data.temperature, "Sampling temperature for pair generation");
  opt("--data-test-fraction", c.data.test_fraction, "Held-out share of generated pairs");
  opt("--data-sharpness", c.data.sharpness, "Bradley-Terry sharpness of the synthetic labeler");
  st.thresholds.assign(c.data.thresholds.begin(), c.data.thresholds.end());
  opt("--data-thresholds", st.thresholds, "Three ascending score-gap cutoffs")->expected(3);
  opt("--data-skip-below", c.data.skip_below, "Both scores below this are Skipped");
  opt("--data-degrees,--degrees", c.data.degrees, "Training degree filter: all or a comma list");
  opt("--data-fraction", c.data.fraction, "Share of the filtered training split to use");

  opt("--reward-arch", c.reward.arch, "linear or tiny-neural");
  opt("--reward-features", c.reward.features, "handcrafted or expressive");
  opt("--reward-hidden", c.reward.hidden, "tiny-neural hidden width");
  opt("--reward-epochs", c.reward.epochs, "Reward training epochs");
  opt("--reward-batch", c.reward.batch, "Reward minibatch size");
  opt("--reward-lr", c.reward.lr, "Reward learning rate (momentum)");
  st.margins.assign(c.reward.margins.begin(), c.reward.margins.end());
  opt("--reward-margins", st.margins, "Margins for much-better, better, slightly-better, negligibly-better")
      ->expected(4);
  opt("--reward-use-margins", c.reward.use_margins, "Subtract per-degree margins in the loss");
  opt("--reward-l2", c.reward.l2, "L2 penalty");
  opt("--reward-normalize", c.reward.normalize, "Normalize scores with training statistics");

  opt("--dpo-beta,--beta", c.dpo.beta, "DPO beta");
  opt("--dpo-variant,--variant", c.dpo.variant, "sigmoid, ipo, hinge or kto-pair");
  opt("--dpo-label-smoothing", c.dpo.label_smoothing, "Sigmoid label smoothing");
  opt("--dpo-kto-reference", c.dpo.kto_reference, "Reference point of kto-pair");
  opt("--dpo-epochs", c.dpo.epochs, "DPO epochs");
  opt("--dpo-batch", c.dpo.batch, "DPO minibatch size");
  opt("--dpo-optimizer", c.dpo.optimizer, "sgd or momentum");
  opt("--dpo-lr", c.dpo.lr, "DPO learning rate");
  opt("--dpo-momentum", c.dpo.momentum, "Momentum coefficient");

  opt("--rlhf-kl-coeff", c.rlhf.kl_coeff, "KL coefficient");
  opt("--rlhf-kl-mode", c.rlhf.kl_mode, "fixed or adaptive");
  opt("--rlhf-target-kl", c.rlhf.target_kl, "Adaptive controller target (nats per sequence)");
  opt("--rlhf-batch-prompts", c.rlhf.batch_prompts, "Prompts per step");
  opt("--rlhf-steps", c.rlhf.steps, "Training steps");
  opt("--rlhf-temperature", c.rlhf.temperature, "Rollout temperature");
  opt("--rlhf-whiten-advantages", c.rlhf.whiten_advantages, "Whiten advantages per batch");
  opt("--rlhf-reward-scaling", c.rlhf.reward_scaling, "none, whiten or scale-only");
  opt("--rlhf-clip", c.rlhf.clip, "Probability ratio clip");
  opt("--rlhf-ppo-epochs", c.rlhf.ppo_epochs, "Passes per sampled batch");
  opt("--rlhf-value-weight", c.rlhf.value_weight, "Value loss weight");
  opt("--rlhf-lr", c.rlhf.lr, "Policy learning rate (Adam)");
  opt("--rlhf-value-lr", c.rlhf.value_lr, "Value learning rate (Adam)");
  opt("--rlhf-lr-final-fraction", c.rlhf.lr_final_fraction, "Linear decay target as a fraction of the lr");
  opt("--rlhf-reward", c.rlhf.reward, "model (checkpoint) or truth (ground-truth scorer)");
  opt("--rlhf-spike-kl-factor", c.rlhf.spike_kl_factor, "KL alert factor over the trailing median");
  opt("--rlhf-spike-reward-factor", c.rlhf.spike_reward_factor, "Reward alert factor over the trailing median");
  opt("--rlhf-spike-kl-floor", c.rlhf.spike_kl_floor, "Floor of the KL baseline");
  opt("--rlhf-spike-reward-floor", c.rlhf.spike_reward_floor, "Floor of the reward baseline");
  opt("--rlhf-spike-window", c.rlhf.spike_window, "Trailing window in steps");

  opt("--eval-temperatures", c.eval.temperatures, "Sampling temperatures to evaluate");
  opt("--eval-comparisons", c.eval.comparisons, "Comparisons per temperature");
  opt("--eval-tie-band", c.eval.tie_band, "Score difference counted as a tie");
  opt("--eval-pool-size", c.eval.pool_size, "Retrieval pool size");
  opt("--eval-mm-per-prompt", c.eval.mm_per_prompt, "Samples per prompt for multimodality");
  opt("--eval-diversity-pairs", c.eval.diversity_pairs, "Random pairs for diversity");
  opt("--eval-min-gap", c.eval.min_gap, "Score gap for ranking agreement pairs");
}

void finish_arrays(ExperimentConfig& c, const ArrayStaging& st) {
  if (st.thresholds.size() != 3) throw ConfigError("data-thresholds: expected 3 values");
  if (st.margins.size() != 4) throw ConfigError("reward-margins: expected 4 values");
  std::copy(st.thresholds.begin(), st.thresholds.end(), c.data.thresholds.begin());
  std::copy(st.margins.begin(), st.margins.end(), c.reward.margins.begin());
}

std::string out_help(const std::string& name) {
  return "Output directory (default runs/" + name + ", under $PREFLAB_DATA_ROOT when set)";
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"preflab: preference fine-tuning lab on a toy motion domain", "preflab"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.set_config("--config", "", "Config file with flat keys such as dpo-beta = 0.1");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  app.require_subcommand(1);

  Context ctx;
  ctx.out = &out;
  ctx.err = &err;
  ArrayStaging staging;
  add_config_options(app, ctx.cfg, staging);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Sample and label preference pairs, write train/test splits");
  gen_cmd->add_option("--out", gen.out, out_help("gen-data"));
  gen_cmd->add_option("--generator", gen.generator, "Policy checkpoint to sample from (default: reference)");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train a reward model, a DPO policy or an RLHF policy");
  train_cmd->require_subcommand(1);
  auto add_train = [&](const std::string& name, const std::string& help) {
    auto* s = train_cmd->add_subcommand(name, help);
    s->add_option("--out", train.out, out_help("train-" + name));
    return s;
  };
  auto* reward_cmd = add_train("reward", "Bradley-Terry reward model");
  reward_cmd->add_option("--data", train.data, "Directory with train.jsonl (and optionally test.jsonl)")->required();
  reward_cmd->add_option("--max-pairs", train.max_pairs, "Use at most this many training pairs");
  auto* dpo_cmd = add_train("dpo", "Direct preference optimization");
  dpo_cmd->add_option("--data", train.data, "Directory with train.jsonl and test.jsonl")->required();
  dpo_cmd->add_option("--init", train.init, "Starting policy checkpoint (default: reference)");
  dpo_cmd->add_flag("--log-steps", train.log_steps, "Also log every optimizer step");
  auto* rlhf_cmd = add_train("rlhf", "KL-regularized policy gradient against a reward");
  rlhf_cmd->add_option("--reward-model", train.reward_model, "Reward checkpoint (rlhf-reward = model)");
  rlhf_cmd->add_option("--init", train.init, "Starting policy checkpoint (default: reference)");

  EvaluateArgs ev;
  auto* eval_cmd = app.add_subcommand("evaluate", "Win rate, diversity, Frechet, multimodality and retrieval");
  eval_cmd->add_option("--policy", ev.policy, "Policy checkpoint")->required();
  eval_cmd->add_option("--baseline", ev.baseline, "Baseline checkpoint (default: reference)");
  eval_cmd->add_option("--data", ev.data, "Dataset directory; adds ranking agreement on its test.jsonl");
  eval_cmd->add_option("--out", ev.out, out_help("evaluate"));

  SweepArgs sw;
  auto* sweep_cmd = app.add_subcommand("sweep", "One training/eval run per axis value and seed");
  sweep_cmd->add_option("--axis", sw.axis, "beta, loss, data-fraction, degrees or temperature")
      ->required()
      ->check(CLI::IsMember({"beta", "loss", "data-fraction", "degrees", "temperature"}));
  sweep_cmd->add_option("--values", sw.values, "Axis values (space or comma separated)")
      ->required()
      ->delimiter(',');
  sweep_cmd->add_option("--seeds", sw.seeds, "Seeds per value")->delimiter(',')->capture_default_str();
  sweep_cmd->add_option("--jobs", sw.jobs, "Run values in parallel threads")->capture_default_str();
  sweep_cmd->add_option("--out", sw.out, out_help("sweep"));

  VerifyArgs ver;
  auto* verify_cmd = app.add_subcommand("verify", "Oracle-backed invariant checks; exit 2 on any failure");
  verify_cmd->add_option("--ipo-target", ver.ipo_target, "Override the IPO target (fault injection)");
  verify_cmd->add_option("--gradient-configs", ver.gradient_configs, "Random configurations per gradient check")
      ->capture_default_str();
  verify_cmd->add_option("--rlhf-steps", ver.rlhf_steps, "Steps for the recovery check")->capture_default_str();
  verify_cmd->add_option("--out", ver.out, out_help("verify"));

  OracleArgs orc;
  auto* oracle_cmd = app.add_subcommand("oracle", "Enumerate one prompt: reference, reward and optimal policy");
  oracle_cmd->add_option("--prompt-index", orc.prompt_index, "Prompt index in the domain")->capture_default_str();
  oracle_cmd->add_option("--kl", orc.beta, "KL coefficient (default rlhf-kl-coeff)");
  oracle_cmd->add_option("--policy", orc.policy, "Also tabulate this policy checkpoint");
  oracle_cmd->add_option("--out", orc.out, out_help("oracle"));

  ServeArgs srv;
  auto* serve_cmd = app.add_subcommand("serve-annotation", "Serve the labeling API and UI assets");
  serve_cmd->add_option("--host", srv.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", srv.port, "Port (0 picks a free one)")->capture_default_str();
  serve_cmd->add_option("--tasks-from", srv.tasks_from, "Dataset file with pre-sampled pairs");
  serve_cmd->add_option("--tasks", srv.tasks, "Generated tasks when --tasks-from is absent")->capture_default_str();
  serve_cmd->add_option("--labelers", srv.labelers, "Registered labeler ids")->delimiter(',')->capture_default_str();
  serve_cmd->add_option("--static", srv.static_dir, "Directory with the UI assets");
  serve_cmd->add_option("--out", srv.out, out_help("annotation"));
  serve_cmd->add_option("--exit-after", srv.exit_after, "Stop after this many seconds (0: until interrupted)");

  ReportArgs rep;
  auto* report_cmd = app.add_subcommand("report", "Summarize finished run directories");
  report_cmd->add_option("runs", rep.runs, "Run directories")->required();
  report_cmd->add_flag("--json", rep.json, "Print JSON instead of text");

  std::vector<std::string> rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kToolVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  }

  auto default_out = [](fs::path& p, const std::string& name) {
    p = resolve_data_path(p.empty() ? fs::path("runs") / name : p);
  };

  try {
    finish_arrays(ctx.cfg, staging);
    ctx.cfg.validate();
    if (gen_cmd->parsed()) {
      ctx.command = "gen-data";
      default_out(gen.out, "gen-data");
      if (gen.generator) gen.generator = resolve_data_path(*gen.generator);
      return cmd_gen_data(ctx, gen);
    }
    if (train_cmd->parsed()) {
      train.data = resolve_data_path(train.data);
      if (train.init) train.init = resolve_data_path(*train.init);
      if (train.reward_model) train.reward_model = resolve_data_path(*train.reward_model);
      if (reward_cmd->parsed()) {
        ctx.command = "train reward";
        default_out(train.out, "train-reward");
        return cmd_train_reward(ctx, train);
      }
      if (dpo_cmd->parsed()) {
        ctx.command = "train dpo";
        default_out(train.out, "train-dpo");
        return cmd_train_dpo(ctx, train);
      }
      ctx.command = "train rlhf";
      default_out(train.out, "train-rlhf");
      return cmd_train_rlhf(ctx, train);
    }
    if (eval_cmd->parsed()) {
      ctx.command = "evaluate";
      ev.policy = resolve_data_path(ev.policy);
      if (ev.baseline) ev.baseline = resolve_data_path(*ev.baseline);
      if (ev.data) ev.data = resolve_data_path(*ev.data);
      default_out(ev.out, "evaluate");
      return cmd_evaluate(ctx, ev);
    }
    if (sweep_cmd->parsed()) {
      ctx.command = "sweep";
      default_out(sw.out, "sweep-" + sw.axis);
      return cmd_sweep(ctx, sw);
    }
    if (verify_cmd->parsed()) {
      ctx.command = "verify";
      default_out(ver.out, "verify");
      return cmd_verify(ctx, ver);
    }
    if (oracle_cmd->parsed()) {
      ctx.command = "oracle";
      if (orc.policy) orc.policy = resolve_data_path(*orc.policy);
      default_out(orc.out, "oracle");
      return cmd_oracle(ctx, orc);
    }
    if (serve_cmd->parsed()) {
      ctx.command = "serve-annotation";
      if (srv.tasks_from) srv.tasks_from = resolve_data_path(*srv.tasks_from);
      default_out(srv.out, "annotation");
      return cmd_serve_annotation(ctx, srv);
    }
    ctx.command = "report";
    for (auto& r : rep.runs) r = resolve_data_path(r);
    return cmd_report(ctx, rep);
  } catch (const DivergenceError& e) {
    err << "divergence: " << e.what() << '\n';
    return kExitDivergence;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: malformed JSON: " << e.what() << '\n';
    return kExitUserError;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitUserError;
  }
}

}  // namespace preflab::cli
