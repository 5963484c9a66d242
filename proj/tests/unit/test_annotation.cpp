#include <memory>
#include <thread>

#include <httplib.h>

#include "doctest.h"
#include "oracles.hpp"
#include "preflab/annotation.hpp"
#include "preflab/annotation_http.hpp"
#include "preflab/error.hpp"

using namespace preflab;
using namespace std::chrono_literals;

namespace {
const Vocab kV = Vocab::motion();

struct FakeClock {
  std::shared_ptr<std::chrono::system_clock::time_point> now =
      std::make_shared<std::chrono::system_clock::time_point>(std::chrono::sys_days{std::chrono::year{2024} / 1 / 1});
  Clock fn() const {
    auto p = now;
    return [p] { return *p; };
  }
  void advance(std::chrono::seconds s) { *now += s; }
};

AnnotationConfig config(double overlap, std::filesystem::path log = {}) {
  AnnotationConfig c;
  c.overlap_fraction = overlap;
  c.deadline = 60s;
  c.seed = 4;
  c.dataset_path = std::move(log);
  c.labelers = {"ana", "bo"};
  return c;
}

void add_tasks(AnnotationServer& s, std::size_t n) {
  const auto prompts = gen_unique_prompts(1, n);
  for (std::size_t i = 0; i < n; ++i)
    s.add_task(prompts[i], parse_seq(kV, "U R EOS"), parse_seq(kV, "L EOS"), {i, i + 1000});
}

LabelSubmission label(const std::string& task, const std::string& who, const std::string& chosen,
                      Degree d = Degree::Better) {
  LabelSubmission l;
  l.task_id = task;
  l.labeler = who;
  l.degree = d;
  l.chosen = chosen;
  l.duration_ms = 1500;
  return l;
}

/// Each labeler fetches and labels tasks until none are left; `pick(labeler, k)`
/// chooses the slot for that labeler's k-th task.
void label_all(AnnotationServer& s, const std::function<std::string(const std::string&, std::size_t)>& pick) {
  for (const std::string who : {"ana", "bo"}) {
    std::size_t k = 0;
    while (auto t = s.next_task(who)) s.submit(label(t->id, who, pick(who, k++)));
  }
}
}  // namespace

TEST_CASE("submission parsing") {
  const auto s = submission_from_json({{"task_id", "t1"}, {"labeler", "ana"}, {"degree", "much-better"}, {"chosen", "b"}});
  CHECK(s.degree == Degree::MuchBetter);
  CHECK(*s.chosen == "b");
  CHECK_THROWS_AS(submission_from_json({{"task_id", "t1"}, {"labeler", "ana"}, {"degree", "better"}}), ConfigError);
  CHECK_THROWS_AS(submission_from_json({{"task_id", "t1"}, {"labeler", "ana"}, {"degree", "better"}, {"chosen", "c"}}),
                  ConfigError);
  CHECK_NOTHROW(submission_from_json({{"task_id", "t1"}, {"labeler", "ana"}, {"degree", "skipped"}}));
  CHECK_THROWS_AS(submission_from_json(nlohmann::json::array()), ConfigError);
}

TEST_CASE("assignment is disjoint and expires at the deadline") {
  FakeClock clock;
  AnnotationServer s(config(0.0), clock.fn());
  add_tasks(s, 3);
  const auto a = s.next_task("ana");
  const auto b = s.next_task("bo");
  REQUIRE(a);
  REQUIRE(b);
  CHECK(a->id != b->id);
  CHECK(s.next_task("ana")->id == a->id);
  CHECK_THROWS_AS(s.next_task("eve"), AuthError);

  CHECK_THROWS_AS(s.submit(label(a->id, "bo", "a")), RejectedInputError);
  clock.advance(61s);
  // ana's task is open again and the oldest; bo's expired too and bo is handed the oldest open task.
  const auto again = s.next_task("bo");
  REQUIRE(again);
  CHECK(again->id == a->id);
  CHECK(s.submit(label(a->id, "bo", "a")).status == SubmitStatus::Stored);
  CHECK(s.task(a->id)->state == TaskState::Done);
}

TEST_CASE("duplicate, conflicting and unknown submissions") {
  FakeClock clock;
  AnnotationServer s(config(0.0), clock.fn());
  add_tasks(s, 2);
  const auto t = s.next_task("ana");
  const auto ack = s.submit(label(t->id, "ana", "b", Degree::MuchBetter));
  CHECK(ack.status == SubmitStatus::Stored);
  CHECK(ack.record.chosen == parse_seq(kV, "L EOS"));
  CHECK(ack.record.rejected == parse_seq(kV, "U R EOS"));
  CHECK(ack.record.source == Source::Human);
  CHECK(ack.record.extra["task_id"] == t->id);
  CHECK(s.submit(label(t->id, "ana", "b", Degree::MuchBetter)).status == SubmitStatus::Duplicate);
  CHECK_THROWS_AS(s.submit(label(t->id, "ana", "a", Degree::MuchBetter)), ConflictError);
  CHECK_THROWS_AS(s.submit(label("t999999", "ana", "a")), RejectedInputError);
  CHECK_THROWS_AS(s.submit(label(t->id, "eve", "a")), AuthError);

  const auto u = s.next_task("ana");
  LabelSubmission shown;
  shown.task_id = u->id;
  shown.labeler = "ana";
  shown.degree = Degree::Better;
  shown.position = "left";
  shown.swapped = true;
  CHECK(s.submit(shown).record.chosen == u->b);
}

TEST_CASE("labels survive a restart through the log") {
  const auto dir = testing::temp_dir("annotation-log");
  FakeClock clock;
  std::string done;
  {
    AnnotationServer s(config(0.0, dir / "labels.jsonl"), clock.fn());
    add_tasks(s, 4);
    const auto t = s.next_task("ana");
    s.submit(label(t->id, "ana", "a"));
    done = t->id;
    s.close();
  }
  AnnotationServer s(config(0.0, dir / "labels.jsonl"), clock.fn());
  add_tasks(s, 4);
  CHECK(s.recover() == 1);
  CHECK(s.task(done)->state == TaskState::Done);
  CHECK(s.labels(done).size() == 1);
  CHECK(s.next_task("ana")->id != done);
  CHECK(load_dataset(dir / "labels.jsonl", kV, 8).size() == 1);
}

TEST_CASE("agreement on overlap tasks") {
  FakeClock clock;
  AnnotationServer s(config(1.0), clock.fn());
  add_tasks(s, 50);
  label_all(s, [](const std::string& who, std::size_t k) { return who == "bo" && k >= 42 ? "b" : "a"; });
  const auto r = s.agreement("ana", "bo");
  CHECK(r.n == 50);
  CHECK(r.agreement == doctest::Approx(0.84));

  AnnotationServer same(config(1.0), clock.fn());
  add_tasks(same, 10);
  label_all(same, [](const std::string&, std::size_t) { return "b"; });
  CHECK(same.agreement("ana", "bo").agreement == 1.0);

  AnnotationServer opposite(config(1.0), clock.fn());
  add_tasks(opposite, 10);
  label_all(opposite, [](const std::string& who, std::size_t) { return who == "ana" ? "a" : "b"; });
  CHECK(opposite.agreement("ana", "bo").agreement == 0.0);

  AnnotationServer partial(config(1.0), clock.fn());
  add_tasks(partial, 3);
  const auto t = partial.next_task("ana");
  partial.submit(label(t->id, "ana", "a"));
  CHECK_THROWS_AS(partial.agreement("ana", "bo"), RejectedInputError);
}

TEST_CASE("stats") {
  FakeClock clock;
  AnnotationServer s(config(0.0), clock.fn());
  const auto fresh = s.stats();
  CHECK(fresh.labels == 0);
  CHECK(fresh.skip_rate == 0.0);
  CHECK(fresh.per_degree.size() == 5);

  add_tasks(s, 6);
  const Degree ds[] = {Degree::MuchBetter, Degree::Better, Degree::Skipped, Degree::Better, Degree::Skipped};
  for (Degree d : ds) {
    const auto t = s.next_task("ana");
    s.submit(label(t->id, "ana", "a", d));
    clock.advance(900s);
  }
  const auto st = s.stats();
  CHECK(st.labels == 5);
  CHECK(st.tasks_total == 6);
  CHECK(st.tasks_done == 5);
  CHECK(st.per_degree.at("better") == 2);
  CHECK(st.per_degree.at("skipped") == 2);
  CHECK(st.per_labeler.at("ana") == 5);
  CHECK(st.per_labeler.at("bo") == 0);
  CHECK(st.skip_rate == doctest::Approx(0.4));
  CHECK(st.mean_duration_ms == doctest::Approx(1500));
  // Four intervals of 15 minutes.
  CHECK(st.throughput_per_hour == doctest::Approx(4.0));
}

TEST_CASE("API routes and status codes") {
  FakeClock clock;
  AnnotationServer s(config(1.0), clock.fn());
  add_tasks(s, 2);
  auto get = [&](const std::string& path, std::map<std::string, std::string> q = {}) {
    return handle_api(s, "GET", path, q, "");
  };
  auto post = [&](const nlohmann::json& body) { return handle_api(s, "POST", "/api/label", {}, body.dump()); };

  const auto next = get("/api/next", {{"labeler", "ana"}});
  REQUIRE(next.status == 200);
  const auto task = nlohmann::json::parse(next.body)["task"];
  const std::string id = task["id"];
  CHECK(task["state"] == "assigned");
  CHECK(get("/api/next", {{"labeler", "eve"}}).status == 403);
  CHECK(get("/api/next").status == 400);
  CHECK(get("/api/nope").status == 404);
  CHECK(handle_api(s, "DELETE", "/api/label", {}, "").status == 404);

  nlohmann::json body{{"task_id", id}, {"labeler", "ana"}, {"degree", "better"}, {"chosen", "a"}};
  const auto ok = post(body);
  CHECK(ok.status == 200);
  CHECK(nlohmann::json::parse(ok.body)["status"] == "stored");
  CHECK(nlohmann::json::parse(post(body).body)["status"] == "duplicate");
  body["chosen"] = "b";
  CHECK(post(body).status == 409);
  CHECK(handle_api(s, "POST", "/api/label", {}, "{not json").status == 400);
  CHECK(post({{"task_id", id}, {"labeler", "ana"}}).status == 400);
  // bo is handed ana's overlap task first, then the second task.
  const auto other = get("/api/next", {{"labeler", "bo"}});
  CHECK(nlohmann::json::parse(other.body)["task"]["id"] == id);
  CHECK(post({{"task_id", id}, {"labeler", "bo"}, {"degree", "better"}, {"chosen", "b"}}).status == 200);
  const std::string bo_task = nlohmann::json::parse(get("/api/next", {{"labeler", "bo"}}).body)["task"]["id"];
  CHECK(bo_task != id);
  CHECK(post({{"task_id", bo_task}, {"labeler", "ana"}, {"degree", "better"}, {"chosen", "a"}}).status == 422);

  const auto agree = get("/api/agreement", {{"a", "ana"}, {"b", "bo"}});
  CHECK(agree.status == 200);
  CHECK(nlohmann::json::parse(agree.body)["agreement"] == 0.0);
  CHECK(post({{"task_id", bo_task}, {"labeler", "bo"}, {"degree", "skipped"}}).status == 200);
  CHECK(get("/api/agreement", {{"a", "ana"}, {"b", "bo"}}).status == 409);
  CHECK(get("/api/agreement", {{"a", "ana"}}).status == 400);
  const auto stats = nlohmann::json::parse(get("/api/stats").body);
  CHECK(stats["labels"] == 3);
  CHECK(stats["tasks_total"] == 2);
}

TEST_CASE("HTTP service on a real socket") {
  const auto dir = testing::temp_dir("annotation-http");
  {
    std::ofstream(dir / "index.html") << "<html>ok</html>";
  }
  AnnotationServer s(config(0.0));
  add_tasks(s, 2);
  AnnotationHttpService svc(s, dir);
  const int port = svc.bind("127.0.0.1", 0);
  REQUIRE(port > 0);
  std::thread th([&] { svc.run(); });
  httplib::Client cli("127.0.0.1", port);
  cli.set_connection_timeout(5);
  for (int i = 0; i < 200 && !svc.running(); ++i) std::this_thread::sleep_for(10ms);

  auto next = cli.Get("/api/next?labeler=ana");
  REQUIRE(next);
  CHECK(next->status == 200);
  const std::string id = nlohmann::json::parse(next->body)["task"]["id"];
  const nlohmann::json body{{"task_id", id}, {"labeler", "ana"}, {"degree", "slightly-better"}, {"chosen", "b"}};
  auto posted = cli.Post("/api/label", body.dump(), "application/json");
  REQUIRE(posted);
  CHECK(posted->status == 200);
  auto forbidden = cli.Get("/api/next?labeler=mallory");
  REQUIRE(forbidden);
  CHECK(forbidden->status == 403);
  auto page = cli.Get("/index.html");
  REQUIRE(page);
  CHECK(page->body == "<html>ok</html>");
  auto stats = cli.Get("/api/stats");
  REQUIRE(stats);
  CHECK(nlohmann::json::parse(stats->body)["per_degree"]["slightly_better"] == 1);

  AnnotationHttpService clash(s, dir);
  CHECK_THROWS_AS(clash.bind("127.0.0.1", port), Error);

  svc.stop();
  th.join();
}
