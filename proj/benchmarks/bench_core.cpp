// Microbenchmarks for the hot paths of training and evaluation.

#include <benchmark/benchmark.h>

#include <random>

#include "preflab/dpo.hpp"
#include "preflab/eval.hpp"
#include "preflab/experiment.hpp"
#include "preflab/oracle.hpp"

using namespace preflab;

namespace {

ExperimentConfig bench_config(const std::string& kind) {
  ExperimentConfig c;
  c.policy.kind = kind;
  c.data.pairs = 512;
  return c;
}

struct Fixture {
  ExperimentConfig cfg;
  Domain domain;
  Policy ref;
  PrefDataset pairs;

  explicit Fixture(const std::string& kind)
      : cfg(bench_config(kind)),
        domain(make_domain(cfg)),
        ref(make_reference(cfg, domain)),
        pairs(training_pairs(generate_pairs(cfg, domain, ref))) {}
};

const Fixture& fixture(const std::string& kind) {
  static const Fixture neural("neural");
  static const Fixture tabular("tabular");
  return kind == "neural" ? neural : tabular;
}

void BM_Logprob(benchmark::State& state) {
  const auto& f = fixture(state.range(0) ? "neural" : "tabular");
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& p = f.pairs.pairs[i++ % f.pairs.size()];
    benchmark::DoNotOptimize(logprob(f.ref, p.prompt, p.chosen));
  }
}
BENCHMARK(BM_Logprob)->Arg(0)->Arg(1);

void BM_Enumerate(benchmark::State& state) {
  const auto& f = fixture("tabular");
  for (auto _ : state) benchmark::DoNotOptimize(enumerate(f.domain.vocab, static_cast<int>(state.range(0))));
}
BENCHMARK(BM_Enumerate)->Arg(2)->Arg(3)->Arg(4);

void BM_DpoGrad(benchmark::State& state) {
  const auto& f = fixture("neural");
  const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(state.range(0)), f.pairs.size());
  const std::span<const PreferencePair> batch(f.pairs.pairs.data(), n);
  const Policy policy = f.ref;
  const DpoConfig dc = dpo_config(f.cfg);
  for (auto _ : state) benchmark::DoNotOptimize(dpo_grad(batch, policy, f.ref, dc));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(BM_DpoGrad)->Arg(16)->Arg(64);

void BM_Frechet(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  FeatureMatrix a(256, std::vector<double>(dim)), b(256, std::vector<double>(dim));
  for (auto& row : a)
    for (auto& v : row) v = g(rng);
  for (auto& row : b)
    for (auto& v : row) v = g(rng) + 0.5;
  for (auto _ : state) benchmark::DoNotOptimize(frechet_distance(a, b));
}
BENCHMARK(BM_Frechet)->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
