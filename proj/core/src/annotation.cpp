#include "preflab/annotation.hpp"

#include <algorithm>
#include <ctime>

#include "preflab/error.hpp"
#include "preflab/random.hpp"

namespace preflab {

std::string format_utc(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const char* task_state_name(TaskState s) {
  switch (s) {
    case TaskState::Unassigned: return "unassigned";
    case TaskState::Assigned: return "assigned";
    case TaskState::Done: return "done";
  }
  return "?";
}

LabelSubmission submission_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("label body must be an object");
  LabelSubmission s;
  try {
    s.task_id = j.at("task_id").get<std::string>();
    s.labeler = j.at("labeler").get<std::string>();
    s.degree = degree_from_name(j.at("degree").get<std::string>());
    if (j.contains("chosen") && !j["chosen"].is_null()) s.chosen = j["chosen"].get<std::string>();
    if (j.contains("position") && !j["position"].is_null()) s.position = j["position"].get<std::string>();
    s.swapped = j.value("swapped", false);
    s.duration_ms = j.value("duration_ms", 0.0);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed label: ") + e.what());
  }
  if (s.chosen && *s.chosen != "a" && *s.chosen != "b") throw ConfigError("chosen must be \"a\" or \"b\"");
  if (s.position && *s.position != "left" && *s.position != "right")
    throw ConfigError("position must be \"left\" or \"right\"");
  if (s.degree != Degree::Skipped && !s.chosen && !s.position)
    throw ConfigError("a non-skipped label needs chosen or position");
  if (!(s.duration_ms >= 0.0)) throw ConfigError("duration_ms must be nonnegative");
  return s;
}

namespace {

int canonical_choice(const LabelSubmission& s) {
  if (s.chosen) return *s.chosen == "a" ? 0 : 1;
  if (s.position) {
    const int shown_left = s.swapped ? 1 : 0;
    return *s.position == "left" ? shown_left : 1 - shown_left;
  }
  return 0;
}

nlohmann::ordered_json completion_json(const Vocab& vocab, const TokenSeq& seq) {
  nlohmann::ordered_json j;
  j["tokens"] = token_names(vocab, seq);
  auto path = nlohmann::ordered_json::array();
  for (const Point& p : decode(vocab, seq).points) path.push_back({p.x, p.y});
  j["path"] = std::move(path);
  return j;
}

}  // namespace

nlohmann::ordered_json task_to_json(const AnnotationTask& task, const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["id"] = task.id;
  j["prompt"] = prompt_to_json(task.prompt);
  j["a"] = completion_json(vocab, task.a);
  j["b"] = completion_json(vocab, task.b);
  j["labels_required"] = task.labels_required;
  j["state"] = task_state_name(task.state);
  if (task.state == TaskState::Assigned) {
    j["assignee"] = task.assignee;
    j["deadline"] = format_utc(task.deadline);
  }
  return j;
}

nlohmann::ordered_json to_json(const AnnotationStats& s) {
  nlohmann::ordered_json j;
  j["labels"] = s.labels;
  j["tasks_total"] = s.tasks_total;
  j["tasks_done"] = s.tasks_done;
  nlohmann::ordered_json d = nlohmann::ordered_json::object();
  for (Degree deg : kAllDegrees) d[degree_name(deg)] = s.per_degree.count(degree_name(deg)) ? s.per_degree.at(degree_name(deg)) : 0;
  j["per_degree"] = d;
  j["per_labeler"] = s.per_labeler;
  j["skip_rate"] = s.skip_rate;
  j["throughput_per_hour"] = s.throughput_per_hour;
  j["mean_duration_ms"] = s.mean_duration_ms;
  return j;
}

AnnotationServer::AnnotationServer(AnnotationConfig cfg, Clock clock) : cfg_(std::move(cfg)), clock_(std::move(clock)) {
  if (!clock_) clock_ = [] { return std::chrono::system_clock::now(); };
  if (!(cfg_.overlap_fraction >= 0.0 && cfg_.overlap_fraction <= 1.0))
    throw ConfigError("overlap_fraction must be in [0, 1]");
  if (cfg_.deadline.count() <= 0) throw ConfigError("deadline must be positive");
  for (const auto& l : cfg_.labelers) register_labeler(l);
  if (!cfg_.dataset_path.empty()) {
    log_.open(cfg_.dataset_path, std::ios::binary | std::ios::app);
    if (!log_) throw Error("cannot open " + cfg_.dataset_path.string() + " for appending");
  }
}

void AnnotationServer::register_labeler(const std::string& id, const std::string& note) {
  if (id.empty()) throw ConfigError("labeler id must be nonempty");
  std::lock_guard lock(mu_);
  labelers_[id] = note;
}

bool AnnotationServer::is_labeler(const std::string& id) const {
  std::lock_guard lock(mu_);
  return labelers_.count(id) > 0;
}

std::string AnnotationServer::add_task(const Prompt& prompt, const TokenSeq& a, const TokenSeq& b,
                                       std::array<std::uint64_t, 2> seeds) {
  validate(cfg_.vocab, a, cfg_.max_len);
  validate(cfg_.vocab, b, cfg_.max_len);
  if (a == b) throw ConfigError("task completions must differ");
  std::lock_guard lock(mu_);
  AnnotationTask t;
  const std::size_t n = tasks_.size();
  char buf[32];
  std::snprintf(buf, sizeof buf, "t%06zu", n + 1);
  t.id = buf;
  t.prompt = prompt;
  t.a = a;
  t.b = b;
  t.seeds = seeds;
  Rng rng(derive_seed(cfg_.seed, 0x6f766cULL, n));
  t.labels_required = uniform01(rng) < cfg_.overlap_fraction ? 2 : 1;
  index_[t.id] = n;
  tasks_.push_back(std::move(t));
  return tasks_.back().id;
}

std::size_t AnnotationServer::recover() {
  if (cfg_.dataset_path.empty() || !std::filesystem::exists(cfg_.dataset_path)) return 0;
  if (log_.is_open()) log_.flush();
  const PrefDataset ds = load_dataset(cfg_.dataset_path, cfg_.vocab, cfg_.max_len);
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  const auto now = clock_();
  for (const auto& rec : ds.pairs) {
    if (!rec.extra.contains("task_id")) continue;
    const auto it = index_.find(rec.extra["task_id"].get<std::string>());
    if (it == index_.end()) continue;
    AnnotationTask& task = tasks_[it->second];
    auto& ls = labels_[task.id];
    if (std::any_of(ls.begin(), ls.end(), [&](const auto& l) { return l.labeler == rec.labeler; })) continue;
    StoredLabel l;
    l.labeler = rec.labeler;
    l.chosen = rec.degree == Degree::Skipped || rec.chosen == task.a ? 0 : 1;
    l.degree = rec.degree;
    l.duration_ms = rec.extra.value("duration_ms", 0.0);
    l.at = now;
    ls.push_back(l);
    task.state = ls.size() >= task.labels_required ? TaskState::Done : TaskState::Unassigned;
    task.assignee.clear();
    ++n;
  }
  return n;
}

void AnnotationServer::expire_locked(std::chrono::system_clock::time_point now) {
  for (auto& t : tasks_)
    if (t.state == TaskState::Assigned && t.deadline <= now) {
      t.state = TaskState::Unassigned;
      t.assignee.clear();
    }
}

std::optional<AnnotationTask> AnnotationServer::next_task(const std::string& labeler) {
  std::lock_guard lock(mu_);
  if (!labelers_.count(labeler)) throw AuthError("unknown labeler '" + labeler + "'");
  const auto now = clock_();
  expire_locked(now);
  for (const auto& t : tasks_)
    if (t.state == TaskState::Assigned && t.assignee == labeler) return t;
  for (auto& t : tasks_) {
    if (t.state != TaskState::Unassigned) continue;
    const auto it = labels_.find(t.id);
    if (it != labels_.end() &&
        std::any_of(it->second.begin(), it->second.end(), [&](const auto& l) { return l.labeler == labeler; }))
      continue;
    t.state = TaskState::Assigned;
    t.assignee = labeler;
    t.deadline = now + cfg_.deadline;
    return t;
  }
  return std::nullopt;
}

PreferencePair AnnotationServer::make_record(const AnnotationTask& task, const StoredLabel& label) const {
  PreferencePair p;
  p.prompt = task.prompt;
  p.chosen = label.chosen == 0 ? task.a : task.b;
  p.rejected = label.chosen == 0 ? task.b : task.a;
  p.degree = label.degree;
  p.labeler = label.labeler;
  p.source = Source::Human;
  p.seeds = task.seeds;
  p.created_at = format_utc(label.at);
  p.extra["task_id"] = task.id;
  p.extra["duration_ms"] = label.duration_ms;
  return p;
}

SubmitAck AnnotationServer::submit(const LabelSubmission& s) {
  std::lock_guard lock(mu_);
  if (!labelers_.count(s.labeler)) throw AuthError("unknown labeler '" + s.labeler + "'");
  const auto it = index_.find(s.task_id);
  if (it == index_.end()) throw RejectedInputError("unknown task '" + s.task_id + "'");
  AnnotationTask& task = tasks_[it->second];
  const int choice = s.degree == Degree::Skipped ? 0 : canonical_choice(s);

  auto& ls = labels_[task.id];
  for (const auto& l : ls)
    if (l.labeler == s.labeler) {
      if (l.chosen == choice && l.degree == s.degree) return {SubmitStatus::Duplicate, make_record(task, l)};
      throw ConflictError("task " + task.id + " already carries a different label from " + s.labeler);
    }
  if (task.state != TaskState::Assigned || task.assignee != s.labeler)
    throw RejectedInputError("task " + task.id + " is not assigned to " + s.labeler);

  StoredLabel l{s.labeler, choice, s.degree, s.duration_ms, clock_()};
  PreferencePair rec = make_record(task, l);
  if (log_.is_open()) {
    log_ << serialize_record(rec, cfg_.vocab) << '\n';
    log_.flush();
    if (!log_) throw Error("failed appending to " + cfg_.dataset_path.string());
  }
  ls.push_back(l);
  task.assignee.clear();
  task.state = ls.size() >= task.labels_required ? TaskState::Done : TaskState::Unassigned;
  return {SubmitStatus::Stored, std::move(rec)};
}

AgreementResult AnnotationServer::agreement(const std::string& a, const std::string& b,
                                            const std::vector<std::string>& tasks) const {
  std::lock_guard lock(mu_);
  auto find = [&](const std::string& task_id, const std::string& who) -> const StoredLabel* {
    const auto it = labels_.find(task_id);
    if (it == labels_.end()) return nullptr;
    for (const auto& l : it->second)
      if (l.labeler == who) return &l;
    return nullptr;
  };
  std::vector<std::string> ids = tasks;
  if (ids.empty())
    for (const auto& t : tasks_)
      if (t.labels_required > 1 && (find(t.id, a) || find(t.id, b))) ids.push_back(t.id);
  std::vector<std::string> missing;
  std::size_t agree = 0;
  for (const auto& id : ids) {
    const StoredLabel* la = find(id, a);
    const StoredLabel* lb = find(id, b);
    if (!la || !lb) {
      missing.push_back(id);
      continue;
    }
    const bool skip_a = la->degree == Degree::Skipped;
    const bool skip_b = lb->degree == Degree::Skipped;
    if (skip_a || skip_b) agree += skip_a == skip_b ? 1 : 0;
    else agree += la->chosen == lb->chosen ? 1 : 0;
  }
  if (!missing.empty()) {
    std::string msg = "overlap tasks not labeled by both " + a + " and " + b + ":";
    for (const auto& m : missing) msg += " " + m;
    throw RejectedInputError(msg);
  }
  if (ids.empty()) throw RejectedInputError("no overlap tasks labeled by " + a + " and " + b);
  return {static_cast<double>(agree) / static_cast<double>(ids.size()), ids.size()};
}

AnnotationStats AnnotationServer::stats() const {
  std::lock_guard lock(mu_);
  AnnotationStats s;
  for (Degree d : kAllDegrees) s.per_degree[degree_name(d)] = 0;
  for (const auto& l : labelers_) s.per_labeler[l.first] = 0;
  s.tasks_total = tasks_.size();
  std::optional<std::chrono::system_clock::time_point> first, last;
  double dur = 0.0;
  std::size_t skipped = 0;
  for (const auto& t : tasks_) {
    s.tasks_done += t.state == TaskState::Done ? 1 : 0;
    const auto it = labels_.find(t.id);
    if (it == labels_.end()) continue;
    for (const auto& l : it->second) {
      ++s.labels;
      ++s.per_degree[degree_name(l.degree)];
      ++s.per_labeler[l.labeler];
      skipped += l.degree == Degree::Skipped ? 1 : 0;
      dur += l.duration_ms;
      if (!first || l.at < *first) first = l.at;
      if (!last || l.at > *last) last = l.at;
    }
  }
  if (s.labels > 0) {
    s.skip_rate = static_cast<double>(skipped) / static_cast<double>(s.labels);
    s.mean_duration_ms = dur / static_cast<double>(s.labels);
  }
  if (s.labels > 1 && first && *last > *first) {
    const double hours = std::chrono::duration<double>(*last - *first).count() / 3600.0;
    s.throughput_per_hour = static_cast<double>(s.labels - 1) / hours;
  }
  return s;
}

std::optional<AnnotationTask> AnnotationServer::task(const std::string& id) const {
  std::lock_guard lock(mu_);
  const auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return tasks_[it->second];
}

std::vector<StoredLabel> AnnotationServer::labels(const std::string& task_id) const {
  std::lock_guard lock(mu_);
  const auto it = labels_.find(task_id);
  return it == labels_.end() ? std::vector<StoredLabel>{} : it->second;
}

void AnnotationServer::close() {
  std::lock_guard lock(mu_);
  if (log_.is_open()) {
    log_.flush();
    log_.close();
  }
}

}  // namespace preflab
