#include "preflab/pref_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "preflab/error.hpp"
#include "preflab/numeric.hpp"
#include "preflab/random.hpp"

namespace preflab {

using nlohmann::ordered_json;

const char* degree_name(Degree d) {
  switch (d) {
    case Degree::MuchBetter: return "much_better";
    case Degree::Better: return "better";
    case Degree::SlightlyBetter: return "slightly_better";
    case Degree::NegligiblyBetter: return "negligibly_better";
    case Degree::Skipped: return "skipped";
  }
  return "?";
}

Degree degree_from_name(const std::string& name) {
  std::string n = name;
  std::replace(n.begin(), n.end(), '-', '_');
  for (Degree d : kAllDegrees)
    if (n == degree_name(d)) return d;
  throw ConfigError("unknown degree label '" + name + "'");
}

const char* source_name(Source s) { return s == Source::Human ? "human" : "synthetic"; }

void DegreeThresholds::validate() const {
  for (double c : cutoffs)
    if (!std::isfinite(c) || c < 0.0) throw ConfigError("degree thresholds must be finite and nonnegative");
  if (!(cutoffs[0] < cutoffs[1] && cutoffs[1] < cutoffs[2]))
    throw ConfigError("degree thresholds must be strictly ascending");
}

Degree degree_for_gap(double gap, const DegreeThresholds& t) {
  gap = std::abs(gap);
  if (gap < t.cutoffs[0]) return Degree::NegligiblyBetter;
  if (gap < t.cutoffs[1]) return Degree::SlightlyBetter;
  if (gap < t.cutoffs[2]) return Degree::Better;
  return Degree::MuchBetter;
}

PreferencePair label_pair_synthetic(const Prompt& prompt, const TokenSeq& y1, const TokenSeq& y2, const ScoreFn& scorer,
                                    const SyntheticLabelConfig& cfg, std::uint64_t seed,
                                    std::array<std::uint64_t, 2> sample_seeds) {
  cfg.thresholds.validate();
  if (!(cfg.sharpness >= 0.0)) throw ConfigError("sharpness must be nonnegative");
  PreferencePair pair;
  pair.prompt = prompt;
  pair.labeler = cfg.labeler;
  pair.source = Source::Synthetic;
  pair.created_at = cfg.created_at;

  const double s1 = scorer(prompt, y1);
  const double s2 = scorer(prompt, y2);
  if (std::max(s1, s2) < cfg.skip_below || y1 == y2) {
    pair.chosen = y1;
    pair.rejected = y2;
    pair.seeds = sample_seeds;
    pair.degree = Degree::Skipped;
    return pair;
  }
  Rng rng(seed);
  const bool pick_first = uniform01(rng) < sigmoid(cfg.sharpness * (s1 - s2));
  pair.chosen = pick_first ? y1 : y2;
  pair.rejected = pick_first ? y2 : y1;
  pair.seeds = pick_first ? sample_seeds : std::array<std::uint64_t, 2>{sample_seeds[1], sample_seeds[0]};
  pair.degree = degree_for_gap(s1 - s2, cfg.thresholds);
  return pair;
}

ordered_json prompt_to_json(const Prompt& prompt) {
  ordered_json spec;
  spec["template"] = template_name(prompt.spec.tmpl);
  spec["primary"] = move_name(prompt.spec.primary);
  spec["secondary"] = move_name(prompt.spec.secondary);
  spec["length"] = prompt.spec.length;
  ordered_json j;
  j["id"] = prompt.id;
  j["text"] = prompt.text;
  j["spec"] = std::move(spec);
  return j;
}

Prompt prompt_from_json(const ordered_json& j) {
  const auto& s = j.at("spec");
  PromptSpec spec;
  spec.tmpl = template_from_name(s.at("template").get<std::string>());
  const auto primary = move_from_name(s.at("primary").get<std::string>());
  const auto secondary = move_from_name(s.at("secondary").get<std::string>());
  if (!primary || !secondary) throw ConfigError("prompt spec has an unknown direction");
  spec.primary = *primary;
  spec.secondary = *secondary;
  spec.length = s.at("length").get<int>();
  validate(spec);
  Prompt p;
  p.id = j.at("id").get<std::string>();
  p.text = j.at("text").get<std::string>();
  p.spec = spec;
  return p;
}

ordered_json to_json(const PreferencePair& pair, const Vocab& vocab) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["prompt"] = prompt_to_json(pair.prompt);
  j["chosen"] = token_names(vocab, pair.chosen);
  j["rejected"] = token_names(vocab, pair.rejected);
  j["degree"] = degree_name(pair.degree);
  j["labeler"] = pair.labeler;
  j["source"] = source_name(pair.source);
  j["seeds"] = pair.seeds;
  j["created_at"] = pair.created_at;
  for (const auto& [k, v] : pair.extra.items()) j[k] = v;
  return j;
}

PreferencePair pair_from_json(const ordered_json& j, const Vocab& vocab, int max_len) {
  if (!j.is_object()) throw ConfigError("record is not an object");
  const int version = j.at("schema_version").get<int>();
  if (version != kSchemaVersion)
    throw MigrationError("record schema_version " + std::to_string(version) + " needs migration to " +
                         std::to_string(kSchemaVersion));
  PreferencePair p;
  p.prompt = prompt_from_json(j.at("prompt"));
  p.chosen = from_names(vocab, j.at("chosen").get<std::vector<std::string>>());
  p.rejected = from_names(vocab, j.at("rejected").get<std::vector<std::string>>());
  validate(vocab, p.chosen, max_len);
  validate(vocab, p.rejected, max_len);
  p.degree = degree_from_name(j.at("degree").get<std::string>());
  p.labeler = j.at("labeler").get<std::string>();
  const auto source = j.at("source").get<std::string>();
  if (source == "human") p.source = Source::Human;
  else if (source == "synthetic") p.source = Source::Synthetic;
  else throw ConfigError("unknown source '" + source + "'");
  p.seeds = j.at("seeds").get<std::array<std::uint64_t, 2>>();
  p.created_at = j.at("created_at").get<std::string>();
  if (p.degree != Degree::Skipped && p.chosen == p.rejected)
    throw ConfigError("chosen and rejected completions are identical");
  static const std::set<std::string> known{"schema_version", "prompt", "source", "chosen", "rejected",
                                           "degree", "labeler", "seeds", "created_at"};
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) p.extra[k] = v;
  return p;
}

std::string serialize_record(const PreferencePair& pair, const Vocab& vocab) { return to_json(pair, vocab).dump(); }

void save_dataset(const PrefDataset& dataset, const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  for (const auto& p : dataset.pairs) out << serialize_record(p, vocab) << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

PrefDataset load_dataset(const std::filesystem::path& path, const Vocab& vocab, int max_len) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  PrefDataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      ds.pairs.push_back(pair_from_json(ordered_json::parse(line), vocab, max_len));
    } catch (const MigrationError& e) {
      throw MigrationError("line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::exception& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return ds;
}

namespace {

PrefDataset subset(const PrefDataset& src, std::vector<std::size_t> idx, Split split) {
  std::sort(idx.begin(), idx.end());
  PrefDataset out;
  out.split = split;
  out.manifest_digest = src.manifest_digest;
  out.pairs.reserve(idx.size());
  for (std::size_t i : idx) out.pairs.push_back(src.pairs[i]);
  return out;
}

}  // namespace

std::pair<PrefDataset, PrefDataset> split(const PrefDataset& dataset, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must be in (0, 1)");
  if (dataset.empty()) throw EmptyDatasetError("cannot split an empty dataset");
  std::vector<std::size_t> idx(dataset.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(derive_seed(seed, 0x73706c6974ULL));
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(dataset.size())));
  std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  return {subset(dataset, std::move(train), Split::Train), subset(dataset, std::move(test), Split::Test)};
}

PrefDataset filter(const PrefDataset& dataset, const std::set<Degree>& degrees, double fraction, std::uint64_t seed) {
  if (degrees.empty()) throw ConfigError("degree filter must name at least one degree");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("data fraction must be in (0, 1]");
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < dataset.size(); ++i)
    if (degrees.contains(dataset.pairs[i].degree)) keep.push_back(i);
  if (keep.empty()) throw EmptyDatasetError("degree filter left no records");
  if (fraction < 1.0) {
    Rng rng(derive_seed(seed, 0x66696c746572ULL));
    std::shuffle(keep.begin(), keep.end(), rng);
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(keep.size())));
    if (n == 0) throw EmptyDatasetError("data fraction left no records");
    keep.resize(n);
  }
  return subset(dataset, std::move(keep), dataset.split);
}

PrefDataset training_pairs(const PrefDataset& dataset) {
  PrefDataset out;
  out.split = dataset.split;
  out.manifest_digest = dataset.manifest_digest;
  for (const auto& p : dataset.pairs)
    if (p.degree != Degree::Skipped) out.pairs.push_back(p);
  return out;
}

std::map<Degree, std::size_t> degree_histogram(const PrefDataset& dataset) {
  std::map<Degree, std::size_t> h;
  for (Degree d : kAllDegrees) h[d] = 0;
  for (const auto& p : dataset.pairs) ++h[p.degree];
  return h;
}

}  // namespace preflab
