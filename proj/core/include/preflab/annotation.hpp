#pragma once

#include <array>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "preflab/pref_data.hpp"

namespace preflab {

using Clock = std::function<std::chrono::system_clock::time_point()>;

/// ISO-8601 UTC with second resolution.
std::string format_utc(std::chrono::system_clock::time_point t);

struct AnnotationConfig {
  Vocab vocab = Vocab::motion();
  int max_len = 8;
  std::chrono::seconds deadline{600};
  /// Fraction of tasks that need a second, independent label.
  double overlap_fraction = 0.1;
  std::uint64_t seed = 0;
  /// Append-only record log; empty keeps labels in memory only.
  std::filesystem::path dataset_path;
  std::vector<std::string> labelers;
};

enum class TaskState { Unassigned, Assigned, Done };
const char* task_state_name(TaskState s);

struct AnnotationTask {
  std::string id;
  Prompt prompt;
  TokenSeq a;
  TokenSeq b;
  std::array<std::uint64_t, 2> seeds{0, 0};
  std::size_t labels_required = 1;
  TaskState state = TaskState::Unassigned;
  std::string assignee;
  std::chrono::system_clock::time_point deadline{};
};

/// `chosen` names the canonical task slot ("a" or "b"). A client that
/// shuffled the display order may send `position` ("left"/"right") and
/// `swapped` (true when b was shown on the left) instead.
struct LabelSubmission {
  std::string task_id;
  std::string labeler;
  Degree degree = Degree::NegligiblyBetter;
  std::optional<std::string> chosen;
  std::optional<std::string> position;
  bool swapped = false;
  double duration_ms = 0.0;
};

/// Parses the POST /api/label body. Throws ConfigError on malformed input.
LabelSubmission submission_from_json(const nlohmann::json& j);

struct StoredLabel {
  std::string labeler;
  int chosen = 0;  // 0 = a, 1 = b; a for Skipped
  Degree degree = Degree::NegligiblyBetter;
  double duration_ms = 0.0;
  std::chrono::system_clock::time_point at{};
};

enum class SubmitStatus { Stored, Duplicate };

struct SubmitAck {
  SubmitStatus status = SubmitStatus::Stored;
  PreferencePair record;
};

struct AgreementResult {
  double agreement = 0.0;
  std::size_t n = 0;
};

struct AnnotationStats {
  std::map<std::string, std::size_t> per_degree;
  std::map<std::string, std::size_t> per_labeler;
  std::size_t labels = 0;
  std::size_t tasks_total = 0;
  std::size_t tasks_done = 0;
  double skip_rate = 0.0;
  /// Labels per hour between the first and last submission.
  double throughput_per_hour = 0.0;
  double mean_duration_ms = 0.0;
};

nlohmann::ordered_json to_json(const AnnotationStats& s);
nlohmann::ordered_json task_to_json(const AnnotationTask& task, const Vocab& vocab);

/// Task queue and label store. All public members are serialized by one
/// mutex; every label is appended and flushed to the log before the ack.
class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationConfig cfg, Clock clock = {});

  void register_labeler(const std::string& id, const std::string& note = {});
  bool is_labeler(const std::string& id) const;

  /// Returns the new task id. Overlap tasks are chosen by a seeded draw.
  std::string add_task(const Prompt& prompt, const TokenSeq& a, const TokenSeq& b,
                       std::array<std::uint64_t, 2> seeds = {0, 0});

  /// Replays labels found in the dataset log for known task ids.
  std::size_t recover();

  /// The labeler's current unexpired assignment, else the oldest open task
  /// it has not labeled yet. Throws AuthError for unknown labelers.
  std::optional<AnnotationTask> next_task(const std::string& labeler);

  /// Throws AuthError (unknown labeler), RejectedInputError (unknown or
  /// foreign task) or ConflictError (different label for the same task).
  SubmitAck submit(const LabelSubmission& label);

  /// Chosen-slot agreement on overlap tasks labeled by either labeler.
  /// Throws RejectedInputError listing overlap tasks only one of them labeled,
  /// or an explicit `tasks` list entry that either is missing.
  AgreementResult agreement(const std::string& a, const std::string& b,
                            const std::vector<std::string>& tasks = {}) const;

  AnnotationStats stats() const;

  std::optional<AnnotationTask> task(const std::string& id) const;
  std::vector<StoredLabel> labels(const std::string& task_id) const;
  const AnnotationConfig& config() const noexcept { return cfg_; }

  /// Flushes and closes the log.
  void close();

 private:
  void expire_locked(std::chrono::system_clock::time_point now);
  PreferencePair make_record(const AnnotationTask& task, const StoredLabel& label) const;

  AnnotationConfig cfg_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, std::string> labelers_;  // id -> note
  std::vector<AnnotationTask> tasks_;
  std::map<std::string, std::size_t> index_;
  std::map<std::string, std::vector<StoredLabel>> labels_;
  std::ofstream log_;
};

}  // namespace preflab
