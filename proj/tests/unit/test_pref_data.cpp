#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "preflab/error.hpp"
#include "preflab/numeric.hpp"
#include "preflab/pref_data.hpp"
#include "preflab/random.hpp"

using namespace preflab;

namespace {
const Vocab kV = Vocab::motion();
const Prompt kP = make_prompt({Template::Line, Move::Right, Move::Up, 3});
const TokenSeq kY1 = parse_seq(kV, "R R EOS");
const TokenSeq kY2 = parse_seq(kV, "U EOS");

ScoreFn fixed(double s1, double s2) {
  return [=](const Prompt&, const TokenSeq& y) { return y == kY1 ? s1 : s2; };
}

std::map<Degree, std::size_t> hist(const PrefDataset& d) { return degree_histogram(d); }
}  // namespace

TEST_CASE("synthetic labels: skip rule, zero gap, logistic choice") {
  const SyntheticLabelConfig cfg;
  CHECK(label_pair_synthetic(kP, kY1, kY2, fixed(0.1, 0.05), cfg, 1).degree == Degree::Skipped);
  CHECK(label_pair_synthetic(kP, kY1, kY1, fixed(0.9, 0.9), cfg, 1).degree == Degree::Skipped);

  int first = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto p = label_pair_synthetic(kP, kY1, kY2, fixed(0.5, 0.5), cfg, static_cast<std::uint64_t>(i));
    CHECK(p.degree == Degree::NegligiblyBetter);
    first += p.chosen == kY1 ? 1 : 0;
  }
  CHECK(std::abs(first / double(n) - 0.5) <= 3 * std::sqrt(0.25 / n));

  CHECK(sigmoid(8 * (0.9 - 0.3)) == doctest::Approx(0.9918).epsilon(1e-4));
  CHECK(label_pair_synthetic(kP, kY1, kY2, fixed(0.9, 0.3), cfg, 3).degree == Degree::MuchBetter);
}

TEST_CASE("synthetic labeling is calibrated at a fixed gap") {
  const SyntheticLabelConfig cfg;
  for (double gap : {0.1, 0.25}) {
    int first = 0;
    const int n = 6000;
    for (int i = 0; i < n; ++i)
      first += label_pair_synthetic(kP, kY1, kY2, fixed(0.5 + gap, 0.5), cfg, derive_seed(77, i)).chosen == kY1;
    const double q = sigmoid(8 * gap);
    CHECK(std::abs(first / double(n) - q) <= 3 * std::sqrt(q * (1 - q) / n));
  }
}

TEST_CASE("degree buckets are monotone in the gap") {
  const DegreeThresholds t;
  auto rank = [](Degree d) { return 3 - static_cast<int>(d); };
  int prev = -1;
  for (double g = 0.0; g <= 1.0; g += 0.001) {
    const int r = rank(degree_for_gap(g, t));
    CHECK(r >= prev);
    prev = r;
  }
  CHECK(degree_for_gap(-0.4, t) == Degree::MuchBetter);
  CHECK_THROWS_AS((DegreeThresholds{{0.3, 0.1, 0.5}}.validate()), ConfigError);
  SyntheticLabelConfig bad;
  bad.thresholds.cutoffs = {0.1, 0.1, 0.0};
  CHECK_THROWS_AS(label_pair_synthetic(kP, kY1, kY2, fixed(1, 0), bad, 1), ConfigError);
}

TEST_CASE("save/load round trip keeps unknown fields and is byte exact") {
  const auto dir = testing::temp_dir("prefdata");
  PrefDataset ds;
  ds.pairs.push_back(label_pair_synthetic(kP, kY1, kY2, fixed(0.9, 0.3), {}, 3, {4, 5}));
  PreferencePair human = ds.pairs.front();
  human.source = Source::Human;
  human.labeler = "ana";
  human.extra["task_id"] = "t000001";
  human.extra["future_field"] = {{"nested", true}};
  ds.pairs.push_back(human);
  save_dataset(ds, dir / "a.jsonl", kV);
  const PrefDataset back = load_dataset(dir / "a.jsonl", kV, 8);
  REQUIRE(back.size() == 2);
  CHECK(back.pairs[0] == ds.pairs[0]);
  CHECK(back.pairs[1] == ds.pairs[1]);
  save_dataset(back, dir / "b.jsonl", kV);
  std::ifstream a(dir / "a.jsonl"), b(dir / "b.jsonl");
  CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST_CASE("corrupted line and schema version errors") {
  const auto dir = testing::temp_dir("prefdata-bad");
  PrefDataset ds;
  for (int i = 0; i < 3; ++i) ds.pairs.push_back(label_pair_synthetic(kP, kY1, kY2, fixed(0.9, 0.3), {}, i));
  save_dataset(ds, dir / "ok.jsonl", kV);
  std::ifstream in(dir / "ok.jsonl");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  {
    std::ofstream out(dir / "bad.jsonl");
    out << lines[0] << '\n' << lines[1].substr(0, 20) << '\n' << lines[2] << '\n';
  }
  try {
    load_dataset(dir / "bad.jsonl", kV, 8);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  auto j = to_json(ds.pairs[0], kV);
  j["schema_version"] = 2;
  CHECK_THROWS_AS(pair_from_json(j, kV, 8), MigrationError);
  auto k = to_json(ds.pairs[0], kV);
  k["rejected"] = k["chosen"];
  CHECK_THROWS_AS(pair_from_json(k, kV, 8), ConfigError);
  auto m = to_json(ds.pairs[0], kV);
  m["chosen"] = {"R", "EOS", "R"};
  CHECK_THROWS_AS(pair_from_json(m, kV, 8), InvalidSequenceError);
}

TEST_CASE("labeled fixture: histogram, split sizes and filters") {
  const auto dir = testing::temp_dir("fixture");
  save_dataset(testing::labeled_fixture(), dir / "fixture.jsonl", kV);
  const PrefDataset ds = load_dataset(dir / "fixture.jsonl", kV, 4);
  REQUIRE(ds.size() == 3528);
  const auto h = hist(ds);
  CHECK(h.at(Degree::MuchBetter) == 996);
  CHECK(h.at(Degree::Better) == 607);
  CHECK(h.at(Degree::SlightlyBetter) == 497);
  CHECK(h.at(Degree::NegligiblyBetter) == 116);
  CHECK(h.at(Degree::Skipped) == 1312);

  const auto [train, test] = split(ds, 0.1, 1);
  CHECK(test.size() == 353);
  CHECK(train.size() == 3175);
  CHECK(train.split == Split::Train);
  CHECK(test.split == Split::Test);

  CHECK(filter(ds, {Degree::MuchBetter}, 1.0, 1).size() == 996);
  const auto all = std::set<Degree>(kAllDegrees.begin(), kAllDegrees.end());
  CHECK(filter(ds, all, 1.0, 1).pairs == ds.pairs);
  const auto fifth = filter(ds, all, 0.2, 4);
  CHECK(fifth.size() == static_cast<std::size_t>(std::lround(0.2 * 3528)));
  CHECK(filter(ds, all, 0.2, 4).pairs == fifth.pairs);
  CHECK(training_pairs(ds).size() == 3528 - 1312);
}

TEST_CASE("split is disjoint, deterministic and exact on small sets") {
  PrefDataset ds;
  for (int i = 0; i < 10; ++i) {
    auto p = label_pair_synthetic(kP, kY1, kY2, fixed(0.9, 0.3), {}, i);
    p.seeds = {static_cast<std::uint64_t>(i), 0};
    ds.pairs.push_back(p);
  }
  const auto [a, b] = split(ds, 0.5, 3);
  CHECK(a.size() == 5);
  CHECK(b.size() == 5);
  std::set<std::uint64_t> ids;
  for (const auto& p : a.pairs) ids.insert(p.seeds[0]);
  for (const auto& p : b.pairs) ids.insert(p.seeds[0]);
  CHECK(ids.size() == 10);
  const auto [a2, b2] = split(ds, 0.5, 3);
  CHECK(a2.pairs == a.pairs);
  CHECK_THROWS_AS(split(PrefDataset{}, 0.1, 1), EmptyDatasetError);
  CHECK_THROWS_AS(split(ds, 1.0, 1), ConfigError);
}

TEST_CASE("filters that leave nothing raise an explicit error") {
  PrefDataset ds;
  ds.pairs.push_back(label_pair_synthetic(kP, kY1, kY2, fixed(0.9, 0.3), {}, 1));
  CHECK_THROWS_AS(filter(ds, {Degree::Skipped}, 1.0, 1), EmptyDatasetError);
  CHECK_THROWS_AS(filter(ds, {}, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(filter(ds, {Degree::MuchBetter}, 0.0, 1), ConfigError);
}
