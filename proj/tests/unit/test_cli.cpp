#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "preflab/cli/app.hpp"
#include "preflab/experiment.hpp"

namespace fs = std::filesystem;
using namespace preflab;

namespace {
struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result preflab_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "preflab");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

nlohmann::json json_file(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

/// Runs each test case under a fresh data root.
struct DataRoot {
  fs::path dir;
  explicit DataRoot(const std::string& name) : dir(testing::temp_dir(name)) {
    ::setenv("PREFLAB_DATA_ROOT", dir.c_str(), 1);
  }
  ~DataRoot() { ::unsetenv("PREFLAB_DATA_ROOT"); }
};

const std::vector<std::string> kSmall{"--domain-max-len", "3", "--domain-max-moves", "2", "--domain-prompts", "3",
                                      "--policy-kind", "tabular", "--pairs", "300"};

std::vector<std::string> small(std::vector<std::string> rest) {
  std::vector<std::string> a = kSmall;
  a.insert(a.end(), rest.begin(), rest.end());
  return a;
}
}  // namespace

TEST_CASE("shipped default config matches the built-in defaults") {
  DataRoot root("cli-defaults");
  REQUIRE(preflab_cli({"gen-data", "--pairs", "10", "--out", "plain"}).code == 0);
  REQUIRE(preflab_cli({"--config", PREFLAB_SOURCE_DIR "/configs/default.toml", "gen-data", "--pairs", "10", "--out", "cfg"}).code == 0);
  CHECK(slurp(root.dir / "plain/config.toml") == slurp(root.dir / "cfg/config.toml"));
  CHECK(slurp(root.dir / "plain/train.jsonl") == slurp(root.dir / "cfg/train.jsonl"));
}

TEST_CASE("flags override the config file, which overrides defaults") {
  DataRoot root("cli-precedence");
  {
    std::ofstream(root.dir / "c.toml") << "dpo-beta = 0.3\ndata-pairs = 40\n";
  }
  REQUIRE(preflab_cli({"--config", (root.dir / "c.toml").string(), "--beta", "0.4", "gen-data", "--out", "g"}).code == 0);
  const auto m = json_file(root.dir / "g/manifest.json");
  CHECK(m["config"]["dpo"]["beta"] == 0.4);
  CHECK(m["config"]["data"]["pairs"] == 40);
  CHECK(m["config"]["data"]["temperature"] == 1.2);

  // The written config reproduces the resolved settings.
  REQUIRE(preflab_cli({"--config", (root.dir / "g/config.toml").string(), "gen-data", "--out", "g2"}).code == 0);
  CHECK(slurp(root.dir / "g/train.jsonl") == slurp(root.dir / "g2/train.jsonl"));
  CHECK(slurp(root.dir / "g/config.toml") == slurp(root.dir / "g2/config.toml"));
}

TEST_CASE("gen-data writes the requested number of records and a manifest") {
  DataRoot root("cli-gen");
  const auto r = preflab_cli({"gen-data", "--pairs", "100"});
  REQUIRE(r.code == 0);
  const fs::path dir = root.dir / "runs/gen-data";
  const auto train = load_dataset(dir / "train.jsonl", Vocab::motion(), 16);
  const auto test = load_dataset(dir / "test.jsonl", Vocab::motion(), 16);
  CHECK(train.size() + test.size() == 100);
  CHECK(test.size() == 10);
  const auto m = json_file(dir / "manifest.json");
  CHECK(m["command"] == "gen-data");
  CHECK(m["config"]["data"]["temperature"] == 1.2);
  CHECK(m["outputs"].size() >= 2);
  CHECK(m["seeds"].contains("seed"));
}

TEST_CASE("exit codes") {
  DataRoot root("cli-exit");
  CHECK(preflab_cli({"--bogus-flag", "verify"}).code == cli::kExitUserError);
  CHECK(preflab_cli({}).code == cli::kExitUserError);
  {
    std::ofstream(root.dir / "bad.toml") << "dpo-betta = 0.1\n";
  }
  const auto unknown = preflab_cli({"--config", (root.dir / "bad.toml").string(), "verify"});
  CHECK(unknown.code == cli::kExitUserError);
  CHECK(unknown.err.find("dpo-betta") != std::string::npos);
  CHECK(preflab_cli({"--dpo-beta", "-1", "gen-data"}).code == cli::kExitUserError);
  CHECK(preflab_cli({"train", "dpo", "--data", "missing"}).code == cli::kExitUserError);

  const auto ok = preflab_cli({"verify", "--out", "v-ok"});
  CHECK(ok.code == cli::kExitOk);
  CHECK(ok.out.find("14/14 checks passed") != std::string::npos);
  const auto bad = preflab_cli({"verify", "--ipo-target", "3", "--out", "v-bad"});
  CHECK(bad.code == cli::kExitVerifyFailed);
  CHECK(bad.out.find("[FAIL] closed-form ipo loss") != std::string::npos);

  REQUIRE(preflab_cli(small({"gen-data", "--out", "d"})).code == 0);
  const auto div = preflab_cli(small({"--dpo-variant", "ipo", "--dpo-lr", "1e200", "train", "dpo", "--data", "d", "--out", "t"}));
  CHECK(div.code == cli::kExitDivergence);
  CHECK(div.err.find("diverged") != std::string::npos);
}

TEST_CASE("train, evaluate, oracle, sweep and report on a small domain") {
  DataRoot root("cli-pipeline");
  REQUIRE(preflab_cli(small({"gen-data", "--out", "d"})).code == 0);
  REQUIRE(preflab_cli(small({"--dpo-epochs", "3", "train", "dpo", "--data", "d", "--out", "dpo"})).code == 0);
  const auto s = json_file(root.dir / "dpo/summary.json");
  CHECK(s.contains("heldout_agreement"));
  CHECK(fs::exists(root.dir / "dpo/policy.json"));

  REQUIRE(preflab_cli(small({"--reward-epochs", "3", "train", "reward", "--data", "d", "--out", "rm"})).code == 0);
  CHECK(fs::exists(root.dir / "rm/reward.json"));
  REQUIRE(preflab_cli(small({"--rlhf-steps", "5", "train", "rlhf", "--reward-model", "rm/reward.json", "--out", "rl"})).code == 0);
  CHECK(read_jsonl(root.dir / "rl/metrics.jsonl").size() == 5);

  REQUIRE(preflab_cli(small({"--eval-comparisons", "20", "--eval-pool-size", "3", "evaluate", "--policy", "dpo/policy.json",
                     "--data", "d", "--out", "ev"}))
              .code == 0);
  CHECK(read_jsonl(root.dir / "ev/metrics.jsonl").size() >= 4);

  REQUIRE(preflab_cli(small({"oracle", "--prompt-index", "1", "--policy", "dpo/policy.json", "--out", "or"})).code == 0);
  const std::string tsv = slurp(root.dir / "or/oracle.tsv");
  CHECK(tsv.rfind("sequence\t", 0) == 0);
  CHECK(tsv.find("p_policy") != std::string::npos);

  REQUIRE(preflab_cli(small({"--dpo-epochs", "2", "sweep", "--axis", "beta", "--values", "0.1,0.2", "--seeds", "0,1", "--out",
                     "sw"}))
              .code == 0);
  const auto sw = json_file(root.dir / "sw/sweep.json");
  REQUIRE(sw["rows"].size() == 2);
  CHECK(sw["rows"][1]["per_seed"].size() == 2);
  CHECK(fs::exists(root.dir / "sw/table.md"));

  const auto rep = preflab_cli({"report", "dpo", "sw", "--json"});
  INFO(rep.err);
  REQUIRE(rep.code == 0);
  const auto rj = nlohmann::json::parse(rep.out);
  CHECK(rj.size() == 2);
  CHECK(preflab_cli({"report", "nope"}).code == cli::kExitUserError);
}

TEST_CASE("serve-annotation starts, serves and exits on its own") {
  DataRoot root("cli-serve");
  const auto r = preflab_cli({"serve-annotation", "--port", "0", "--tasks", "4", "--exit-after", "1", "--out", "ann"});
  CHECK(r.code == 0);
  const auto stats = json_file(root.dir / "ann/stats.json");
  CHECK(stats["tasks_total"] == 4);
  CHECK(fs::exists(root.dir / "ann/manifest.json"));
}
