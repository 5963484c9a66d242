#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "preflab/motion.hpp"
#include "preflab/sequence.hpp"

namespace preflab {

enum class Degree { MuchBetter, Better, SlightlyBetter, NegligiblyBetter, Skipped };

inline constexpr std::array<Degree, 5> kAllDegrees{Degree::MuchBetter, Degree::Better, Degree::SlightlyBetter,
                                                   Degree::NegligiblyBetter, Degree::Skipped};

/// Stored names: much_better, better, slightly_better, negligibly_better, skipped.
const char* degree_name(Degree d);
/// Accepts stored names and their dashed forms (much-better).
Degree degree_from_name(const std::string& name);

enum class Source { Human, Synthetic };
const char* source_name(Source s);

struct PreferencePair {
  Prompt prompt;
  TokenSeq chosen;
  TokenSeq rejected;
  Degree degree = Degree::NegligiblyBetter;
  std::string labeler;
  Source source = Source::Synthetic;
  std::array<std::uint64_t, 2> seeds{0, 0};
  std::string created_at;
  /// Fields this build does not know about; written back unchanged.
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

enum class Split { All, Train, Test };

struct PrefDataset {
  std::vector<PreferencePair> pairs;
  Split split = Split::All;
  std::string manifest_digest;

  std::size_t size() const noexcept { return pairs.size(); }
  bool empty() const noexcept { return pairs.empty(); }
};

/// Ascending score-gap cutoffs separating NegligiblyBetter | SlightlyBetter |
/// Better | MuchBetter.
struct DegreeThresholds {
  std::array<double, 3> cutoffs{0.05, 0.15, 0.35};
  void validate() const;
};

Degree degree_for_gap(double gap, const DegreeThresholds& thresholds);

struct SyntheticLabelConfig {
  DegreeThresholds thresholds;
  /// Bradley-Terry sharpness k: P(choose y1) = sigma(k (s1 - s2)).
  double sharpness = 8.0;
  /// Both scores below this -> Skipped.
  double skip_below = 0.2;
  std::string labeler = "synthetic-bt";
  std::string created_at = "1970-01-01T00:00:00Z";
};

using ScoreFn = std::function<double(const Prompt&, const TokenSeq&)>;

/// Labels a sampled pair with a ground-truth scorer. Identical completions
/// are Skipped (they cannot be compared).
PreferencePair label_pair_synthetic(const Prompt& prompt, const TokenSeq& y1, const TokenSeq& y2, const ScoreFn& scorer,
                                    const SyntheticLabelConfig& cfg, std::uint64_t seed,
                                    std::array<std::uint64_t, 2> sample_seeds = {0, 0});

inline constexpr int kSchemaVersion = 1;

nlohmann::ordered_json to_json(const PreferencePair& pair, const Vocab& vocab);
/// Throws MigrationError on a schema_version other than kSchemaVersion.
PreferencePair pair_from_json(const nlohmann::ordered_json& j, const Vocab& vocab, int max_len);

nlohmann::ordered_json prompt_to_json(const Prompt& prompt);
Prompt prompt_from_json(const nlohmann::ordered_json& j);

/// One record per line, UTF-8.
std::string serialize_record(const PreferencePair& pair, const Vocab& vocab);
void save_dataset(const PrefDataset& dataset, const std::filesystem::path& path, const Vocab& vocab);
/// Parse failures raise ParseError carrying the 1-based line number.
PrefDataset load_dataset(const std::filesystem::path& path, const Vocab& vocab, int max_len);

/// Seeded shuffle; |test| = round(test_fraction * n). Both halves keep the
/// original record order.
std::pair<PrefDataset, PrefDataset> split(const PrefDataset& dataset, double test_fraction, std::uint64_t seed);

/// Keeps records whose degree is in `degrees`, then a seeded random
/// `fraction` of them.
PrefDataset filter(const PrefDataset& dataset, const std::set<Degree>& degrees, double fraction, std::uint64_t seed);

/// Drops Skipped records (the default training view).
PrefDataset training_pairs(const PrefDataset& dataset);

std::map<Degree, std::size_t> degree_histogram(const PrefDataset& dataset);

}  // namespace preflab
