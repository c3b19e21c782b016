#include <gtest/gtest.h>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "focuskit/focuskit.hpp"
#include "oracles.hpp"

using namespace focuskit;
using namespace focuskit::evalservice;

namespace {

struct FigureRow {
  const char* model;
  std::array<double, 5> percentages;
  double table_correctness;
};

// Score distributions of the human rating figure and the correctness column
// of the LLM comparison table.
const FigureRow kRows[] = {
    {"GPT-4", {8.4, 5.5, 5.7, 25.1, 55.3}, 82.6},
    {"GPT-3.5", {10.6, 7.5, 11.9, 22.9, 47.1}, 77.6},
    {"LLaMA-2", {15.5, 10.6, 9.3, 28.0, 36.6}, 72.0},
};

double mean_score(const std::array<double, 5>& p) {
  double m = 0;
  for (int i = 0; i < 5; ++i) m += (i + 1) * p[static_cast<std::size_t>(i)] / 100.0;
  return m;
}

TaskSet fixture_tasks() { return load_tasks(oracle::fixture("tasks.json")); }

UtcTime at(std::int64_t ms) { return UtcTime(std::chrono::milliseconds(ms)); }

std::vector<RatingRecord> records_with_scores(const TaskSet& tasks, std::vector<int> scores) {
  std::vector<RatingRecord> out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out.push_back({tasks.tasks[i % tasks.tasks.size()].task_id, fmt::format("r{}", i / tasks.tasks.size()), scores[i],
                   at(1000 * static_cast<std::int64_t>(i))});
  }
  return out;
}

std::size_t line_count(const fs::path& p) {
  if (!fs::exists(p)) return 0;
  const auto text = read_file(p);
  return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

class ServerFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    store_ = std::make_unique<RatingStore>(fixture_tasks(), dir_ / "ratings.jsonl", 7);
    server_ = std::make_unique<RatingServer>(*store_, ServerOptions{"127.0.0.1", 0, std::nullopt});
    port_ = server_->bind();
    thread_ = std::thread([this] { server_->listen(); });
    server_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }

  httplib::Result post(const json& body) { return client_->Post("/api/ratings", body.dump(), "application/json"); }

  oracle::TempDir dir_;
  std::unique_ptr<RatingStore> store_;
  std::unique_ptr<RatingServer> server_;
  std::thread thread_;
  int port_ = 0;
  std::unique_ptr<httplib::Client> client_;
};

}  // namespace

TEST(Correctness, FigureRowsMatchTable) {
  for (const auto& row : kRows) {
    double total = 0;
    for (double p : row.percentages) total += p;
    EXPECT_NEAR(total, 100.0, 0.01) << row.model;
    EXPECT_NEAR(correctness_from_distribution(row.percentages), row.table_correctness, 0.3) << row.model;
  }
  EXPECT_NEAR(correctness_from_distribution(kRows[0].percentages), 82.68, 1e-9);
  EXPECT_NEAR(correctness_from_distribution(kRows[2].percentages), 71.92, 1e-9);
}

TEST(Correctness, OnlyTwentyTimesMeanFitsAllRows) {
  // Candidate scale mappings from a percentage distribution to a 0-100 score.
  struct Candidate {
    const char* name;
    double (*map)(const std::array<double, 5>&);
  };
  const Candidate candidates[] = {
      {"20*mean", [](const std::array<double, 5>& p) { return 20 * mean_score(p); }},
      {"25*(mean-1)", [](const std::array<double, 5>& p) { return 25 * (mean_score(p) - 1); }},
      {"top-two share", [](const std::array<double, 5>& p) { return p[3] + p[4]; }},
      {"top share", [](const std::array<double, 5>& p) { return p[4]; }},
      {"not-wrong share", [](const std::array<double, 5>& p) { return 100 - p[0]; }},
      {"weighted 0,.25,.5,.75,1", [](const std::array<double, 5>& p) {
         return 0.25 * p[1] + 0.5 * p[2] + 0.75 * p[3] + p[4];
       }},
  };
  std::vector<std::string> fitting;
  for (const auto& c : candidates) {
    bool all = true;
    for (const auto& row : kRows) all = all && std::abs(c.map(row.percentages) - row.table_correctness) <= 0.3;
    if (all) fitting.push_back(c.name);
  }
  EXPECT_EQ(fitting, std::vector<std::string>{"20*mean"});
}

TEST(Correctness, EndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(correctness_from_distribution({0, 0, 0, 0, 100}), 100.0);
  EXPECT_DOUBLE_EQ(correctness_from_distribution({100, 0, 0, 0, 0}), 20.0);
  EXPECT_DOUBLE_EQ(correctness_from_distribution({0, 50, 0, 50, 0}), 60.0);
  EXPECT_THROW(correctness_from_distribution({0, 0, 0, 0, 0}), ValidationError);
}

TEST(Correctness, RangeAndLinearity) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, 5> p{};
    double total = 0;
    for (auto& v : p) total += (v = u(rng));
    for (auto& v : p) v *= 100 / total;
    const double c = correctness_from_distribution(p);
    EXPECT_GE(c, 20.0 - 1e-9);
    EXPECT_LE(c, 100.0 + 1e-9);
    double linear = 0;
    for (int i = 0; i < 5; ++i) linear += (i + 1) * p[static_cast<std::size_t>(i)] * 20 / 100;
    EXPECT_NEAR(c, linear, 1e-9);
  }
}

TEST(Aggregate, CountsToCorrectness) {
  const auto tasks = fixture_tasks();
  // t1..t3 are gpt-4, t4..t5 are llama-2.
  const auto recs = records_with_scores(tasks, {5, 4, 3, 1, 2, 5, 5, 5, 2, 2});
  const auto rep = aggregate(recs, tasks);
  ASSERT_EQ(rep.models.size(), 2u);
  EXPECT_EQ(rep.models[0].model_name, "gpt-4");
  EXPECT_EQ(rep.models[0].n, 6);
  EXPECT_NEAR(rep.models[0].correctness, 20.0 * 27 / 6, 1e-12);
  EXPECT_EQ(rep.models[1].counts, (std::array<int, 5>{1, 3, 0, 0, 0}));
  EXPECT_NEAR(rep.models[1].correctness, 20.0 * 7 / 4, 1e-12);
  double total = 0;
  for (double p : rep.models[1].percentages) total += p;
  EXPECT_NEAR(total, 100.0, 0.01);
  ASSERT_TRUE(rep.overall.has_value());
  EXPECT_EQ(rep.overall->n, 10);
}

TEST(Aggregate, PermutationInvariantAndMidpoint) {
  const auto tasks = fixture_tasks();
  auto recs = records_with_scores(tasks, {1, 2, 3, 4, 5, 3, 3, 2, 4, 3});
  const auto base = to_json(aggregate(recs, tasks));
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(recs.begin(), recs.end(), rng);
    EXPECT_EQ(to_json(aggregate(recs, tasks)), base);
  }
  EXPECT_DOUBLE_EQ(aggregate(recs, tasks).overall->correctness, 60.0);
}

TEST(Aggregate, ModelWithoutRecordsOmitted) {
  const auto tasks = fixture_tasks();
  const std::vector<RatingRecord> recs = {{"t1", "r", 4, at(0)}};
  const auto rep = aggregate(recs, tasks);
  ASSERT_EQ(rep.models.size(), 1u);
  EXPECT_EQ(rep.omitted, std::vector<std::string>{"llama-2"});
  EXPECT_FALSE(aggregate({}, tasks).overall.has_value());
}

TEST(Tasks, LoadAndValidate) {
  oracle::TempDir dir;
  fs::create_directories(dir / "img");
  fs::copy_file(oracle::fixture("images/img_b.png"), dir / "img/b.png");
  auto doc = json::array();
  for (int i = 0; i < 10; ++i) {
    doc.push_back({{"task_id", fmt::format("k{}", i)}, {"image", "img/b.png"}, {"sentence", "s"}, {"model_name", "m"}});
  }
  write_file_atomic(dir / "tasks.json", doc.dump());
  const auto set = load_tasks(dir / "tasks.json");
  EXPECT_EQ(set.tasks.size(), 10u);
  EXPECT_EQ(set.tasks[0].image_ref, "/images/img/b.png");
  doc[3]["task_id"] = "k0";
  write_file_atomic(dir / "dup.json", doc.dump());
  EXPECT_THROW(load_tasks(dir / "dup.json"), ValidationError);
  doc[3]["task_id"] = "k3";
  doc[4]["image"] = "img/missing.png";
  write_file_atomic(dir / "missing.json", doc.dump());
  EXPECT_THROW(load_tasks(dir / "missing.json"), IoError);
}

TEST(Store, PerRaterOrderAndProgress) {
  oracle::TempDir dir;
  RatingStore store(fixture_tasks(), dir / "j.jsonl", 3);
  const auto a = store.order_for("alice"), b = store.order_for("bob");
  EXPECT_EQ(a, store.order_for("alice"));
  EXPECT_NE(a, b);
  auto next = store.next_task("alice");
  ASSERT_NE(next.task, nullptr);
  EXPECT_EQ(next.task->task_id, store.tasks().tasks[a[0]].task_id);
  EXPECT_EQ(next.position, 1);
  EXPECT_EQ(next.total, 5);
  for (int i = 0; i < 5; ++i) store.submit(store.next_task("alice").task->task_id, "alice", 3, at(i));
  next = store.next_task("alice");
  EXPECT_EQ(next.task, nullptr);
  EXPECT_EQ(next.rated, 5);
  EXPECT_NE(store.next_task("bob").task, nullptr);
  EXPECT_THROW(store.next_task(""), ValidationError);
}

TEST(Store, SubmitErrorsAndJournalGrowth) {
  oracle::TempDir dir;
  RatingStore store(fixture_tasks(), dir / "j.jsonl");
  store.submit("t1", "r", 5, at(0));
  EXPECT_EQ(line_count(dir / "j.jsonl"), 1u);
  EXPECT_THROW(store.submit("t1", "r", 4, at(1)), ConflictError);
  EXPECT_THROW(store.submit("t2", "r", 6, at(1)), ValidationError);
  EXPECT_THROW(store.submit("t2", "r", 0, at(1)), ValidationError);
  EXPECT_THROW(store.submit("t9", "r", 3, at(1)), NotFoundError);
  EXPECT_EQ(line_count(dir / "j.jsonl"), 1u);
  EXPECT_EQ(store.records().size(), 1u);
}

TEST(Store, ReplayRestoresState) {
  oracle::TempDir dir;
  std::vector<RatingRecord> before;
  {
    RatingStore store(fixture_tasks(), dir / "j.jsonl", 5);
    store.submit("t2", "a", 4, at(10));
    store.submit("t1", "b", 2, at(20));
    store.submit("t5", "a", 1, at(30));
    before = store.records();
  }
  RatingStore again(fixture_tasks(), dir / "j.jsonl", 5);
  EXPECT_EQ(again.records(), before);
  EXPECT_THROW(again.submit("t2", "a", 5, at(40)), ConflictError);
  EXPECT_EQ(again.next_task("a").rated, 2);
}

TEST(Store, CorruptJournalRejected) {
  oracle::TempDir dir;
  write_file_atomic(dir / "j.jsonl", "{\"task_id\":\"t1\",\"rater_id\":\"r\",\"score\":9,\"timestamp\":\"2024-03-01T12:00:00.000Z\"}\n");
  EXPECT_THROW(RatingStore(fixture_tasks(), dir / "j.jsonl"), ValidationError);
}

TEST(Store, ConcurrentDuplicateSubmitsOneWins) {
  oracle::TempDir dir;
  RatingStore store(fixture_tasks(), dir / "j.jsonl");
  std::atomic<int> ok{0}, conflicts{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&] {
      try {
        store.submit("t3", "same", 4);
        ++ok;
      } catch (const ConflictError&) {
        ++conflicts;
      }
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(ok.load(), 1);
  EXPECT_EQ(conflicts.load(), 7);
  EXPECT_EQ(line_count(dir / "j.jsonl"), 1u);
}

TEST(Export, HeaderOnlyWhenEmpty) {
  EXPECT_EQ(export_csv({}, fixture_tasks()), std::string(kCsvHeader) + "\n");
  EXPECT_TRUE(import_csv(export_csv({}, fixture_tasks())).empty());
}

TEST(Export, RowsSortedAndRoundTrip) {
  const auto tasks = fixture_tasks();
  const std::vector<RatingRecord> recs = {{"t4", "b", 2, at(3000)}, {"t1", "z", 5, at(1000)}, {"t1", "a", 4, at(2250)}};
  const auto csv = export_csv(recs, tasks);
  EXPECT_EQ(csv, std::string(kCsvHeader) +
                     "\nt1,a,gpt-4,4,1970-01-01T00:00:02.250Z\nt1,z,gpt-4,5,1970-01-01T00:00:01.000Z\n"
                     "t4,b,llama-2,2,1970-01-01T00:00:03.000Z\n");
  const auto back = import_csv(csv);
  EXPECT_EQ(back.size(), 3u);
  EXPECT_EQ(to_json(aggregate(back, tasks)), to_json(aggregate(recs, tasks)));
  const auto via_json = import_json(export_json(recs, tasks));
  EXPECT_EQ(via_json, back);
}

TEST(Export, QuotedFieldsSurvive) {
  const auto tasks = fixture_tasks();
  const std::vector<RatingRecord> recs = {{"t1", "o'brien, \"pat\"", 3, at(0)}};
  EXPECT_EQ(import_csv(export_csv(recs, tasks)), recs);
  EXPECT_THROW(import_csv("wrong,header\n"), ParseError);
}

TEST_F(ServerFixture, NextTaskRequiresRater) {
  const auto res = client_->Get("/api/tasks/next");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
}

TEST_F(ServerFixture, RateEverythingThenStats) {
  for (int score = 1; score <= 5; ++score) {
    const auto res = client_->Get("/api/tasks/next?rater=ann");
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200);
    const auto body = json::parse(res->body);
    EXPECT_FALSE(body["done"].get<bool>());
    EXPECT_EQ(body["position"], score);
    EXPECT_FALSE(body["task"].contains("model_name"));
    const auto task_id = body["task"]["task_id"].get<std::string>();
    const auto ack = post({{"task_id", task_id}, {"rater_id", "ann"}, {"score", score}});
    ASSERT_TRUE(ack);
    EXPECT_EQ(ack->status, 200);
    EXPECT_EQ(json::parse(ack->body)["record"]["score"], score);
  }
  const auto done = json::parse(client_->Get("/api/tasks/next?rater=ann")->body);
  EXPECT_TRUE(done["done"].get<bool>());
  EXPECT_EQ(done["rated"], 5);
  const auto stats = json::parse(client_->Get("/api/stats")->body);
  EXPECT_DOUBLE_EQ(stats["overall"]["correctness"].get<double>(), 60.0);
  EXPECT_EQ(stats["overall"]["n"], 5);
  EXPECT_EQ(line_count(dir_ / "ratings.jsonl"), 5u);
}

TEST_F(ServerFixture, SubmitStatusCodes) {
  EXPECT_EQ(post({{"task_id", "t1"}, {"rater_id", "x"}, {"score", 4}})->status, 200);
  EXPECT_EQ(post({{"task_id", "t1"}, {"rater_id", "x"}, {"score", 4}})->status, 409);
  EXPECT_EQ(post({{"task_id", "nope"}, {"rater_id", "x"}, {"score", 4}})->status, 404);
  EXPECT_EQ(post({{"task_id", "t2"}, {"rater_id", "x"}, {"score", 6}})->status, 400);
  EXPECT_EQ(post({{"task_id", "t2"}, {"rater_id", "x"}, {"score", "5"}})->status, 400);
  EXPECT_EQ(client_->Post("/api/ratings", "{not json", "application/json")->status, 400);
}

TEST_F(ServerFixture, ExportFormats) {
  post({{"task_id", "t4"}, {"rater_id", "x"}, {"score", 2}});
  const auto csv = client_->Get("/api/export?format=csv");
  ASSERT_TRUE(csv);
  EXPECT_EQ(csv->status, 200);
  EXPECT_EQ(import_csv(csv->body).size(), 1u);
  const auto js = client_->Get("/api/export?format=json");
  EXPECT_EQ(import_json(js->body).front().task_id, "t4");
  EXPECT_EQ(client_->Get("/api/export?format=xml")->status, 400);
}

TEST_F(ServerFixture, ServesTaskImages) {
  const auto body = json::parse(client_->Get("/api/tasks/next?rater=img")->body);
  const auto res = client_->Get(body["task"]["image_url"].get<std::string>());
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->body.substr(1, 3), "PNG");
}
