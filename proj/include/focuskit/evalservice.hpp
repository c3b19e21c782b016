#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "focuskit/error.hpp"
#include "focuskit/rng.hpp"
#include "focuskit/util.hpp"

namespace focuskit::evalservice {

inline constexpr std::array<std::string_view, 5> kScoreLabels = {"Wrong", "Partly Wrong", "Neutral", "Mostly Correct",
                                                                 "Correct"};

struct RatingTask {
  std::string task_id;
  std::string image;      // path as written in the tasks file, relative to it
  std::string image_ref;  // URL path served by the rating server
  std::string sentence;
  std::string model_name;
  bool operator==(const RatingTask&) const = default;
};

struct RatingRecord {
  std::string task_id;
  std::string rater_id;
  int score = 0;
  UtcTime timestamp{};
  bool operator==(const RatingRecord&) const = default;
};

struct TaskSet {
  std::vector<RatingTask> tasks;
  fs::path image_root;  // directory holding the tasks file
  const RatingTask* find(std::string_view id) const {
    for (const auto& t : tasks) {
      if (t.task_id == id) return &t;
    }
    return nullptr;
  }
};

/// Reads [{task_id, image, sentence, model_name}]. Image paths resolve
/// against the tasks file's directory and must exist.
inline TaskSet load_tasks(const fs::path& path) {
  const json doc = load_json_file(path);
  if (!doc.is_array()) throw ValidationError(path.string() + ": expected a JSON array of tasks");
  TaskSet set;
  set.image_root = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& t = doc[i];
    for (const char* key : {"task_id", "image", "sentence", "model_name"}) {
      if (!t.is_object() || !t.contains(key) || !t[key].is_string()) {
        throw ValidationError(fmt::format("{}: task {} needs string field '{}'", path.string(), i, key));
      }
    }
    RatingTask task{t["task_id"].get<std::string>(), t["image"].get<std::string>(), "",
                    t["sentence"].get<std::string>(), t["model_name"].get<std::string>()};
    if (task.sentence.empty()) throw ValidationError(fmt::format("{}: task '{}' has an empty sentence", path.string(), task.task_id));
    if (!ids.insert(task.task_id).second) {
      throw ValidationError(fmt::format("{}: duplicate task_id '{}'", path.string(), task.task_id));
    }
    if (!fs::is_regular_file(set.image_root / task.image)) {
      throw IoError(fmt::format("{}: task '{}' image '{}' not found", path.string(), task.task_id, task.image));
    }
    task.image_ref = "/images/" + fs::path(task.image).lexically_normal().generic_string();
    set.tasks.push_back(std::move(task));
  }
  return set;
}

inline ordered_json record_to_json(const RatingRecord& r) {
  ordered_json j;
  j["task_id"] = r.task_id;
  j["rater_id"] = r.rater_id;
  j["score"] = r.score;
  j["timestamp"] = format_utc(r.timestamp);
  return j;
}

inline RatingRecord record_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("rating record must be an object");
  for (const char* key : {"task_id", "rater_id", "timestamp"}) {
    if (!j.contains(key) || !j[key].is_string()) throw ValidationError(fmt::format("rating record needs string '{}'", key));
  }
  if (!j.contains("score") || !j["score"].is_number_integer()) throw ValidationError("rating record needs integer 'score'");
  return {j["task_id"].get<std::string>(), j["rater_id"].get<std::string>(), j["score"].get<int>(),
          parse_utc(j["timestamp"].get<std::string>())};
}

inline void validate_score(int score) {
  if (score < 1 || score > 5) throw ValidationError(fmt::format("score must be 1..5, got {}", score));
}

struct NextTask {
  const RatingTask* task = nullptr;  // null when the rater is done
  int position = 0;                  // 1-based position in the rater's order
  int total = 0;
  int rated = 0;
};

/// Task queue plus the append-only ratings journal. Mutations hold an
/// exclusive lock across the duplicate check and the durable append;
/// readers take shared locks.
class RatingStore {
 public:
  RatingStore(TaskSet tasks, fs::path journal, std::uint64_t seed = 0)
      : tasks_(std::move(tasks)), journal_(std::move(journal)), seed_(seed) {
    replay();
  }

  const TaskSet& tasks() const { return tasks_; }
  const fs::path& journal() const { return journal_; }

  /// Seeded per-rater permutation of task indices.
  std::vector<std::size_t> order_for(std::string_view rater) const {
    SplitMix64 rng(seed_ ^ fnv1a64(rater));
    return rng.permutation(tasks_.tasks.size());
  }

  NextTask next_task(std::string_view rater) const {
    if (rater.empty()) throw ValidationError("rater id is empty");
    std::shared_lock lock(mu_);
    NextTask out;
    out.total = static_cast<int>(tasks_.tasks.size());
    const auto order = order_for(rater);
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& t = tasks_.tasks[order[i]];
      if (rated_.count({t.task_id, std::string(rater)})) {
        ++out.rated;
      } else if (!out.task) {
        out.task = &t;
        out.position = static_cast<int>(i) + 1;
      }
    }
    return out;
  }

  RatingRecord submit(const std::string& task_id, const std::string& rater_id, int score, UtcTime now = utc_now()) {
    if (rater_id.empty()) throw ValidationError("rater id is empty");
    validate_score(score);
    if (!tasks_.find(task_id)) throw NotFoundError(fmt::format("unknown task '{}'", task_id));
    RatingRecord rec{task_id, rater_id, score, now};
    std::unique_lock lock(mu_);
    if (rated_.count({task_id, rater_id})) {
      throw ConflictError(fmt::format("rater '{}' already rated task '{}'", rater_id, task_id));
    }
    append_line_durable(journal_, record_to_json(rec).dump());
    rated_.insert({task_id, rater_id});
    records_.push_back(rec);
    return rec;
  }

  std::vector<RatingRecord> records() const {
    std::shared_lock lock(mu_);
    return records_;
  }

 private:
  void replay() {
    if (!fs::exists(journal_)) return;
    const std::string text = read_file(journal_);
    std::size_t line_no = 0, start = 0;
    while (start < text.size()) {
      auto end = text.find('\n', start);
      if (end == std::string::npos) end = text.size();
      ++line_no;
      const std::string_view line(text.data() + start, end - start);
      start = end + 1;
      if (line.empty()) continue;
      const std::string origin = fmt::format("{}:{}", journal_.string(), line_no);
      RatingRecord rec;
      try {
        rec = record_from_json(parse_json(line, origin));
        validate_score(rec.score);
      } catch (const ParseError&) {
        throw;
      } catch (const ValidationError& e) {
        throw ValidationError(fmt::format("{}: {}", origin, e.what()));
      }
      if (!tasks_.find(rec.task_id)) throw ValidationError(fmt::format("{}: unknown task '{}'", origin, rec.task_id));
      if (!rated_.insert({rec.task_id, rec.rater_id}).second) {
        throw ValidationError(fmt::format("{}: duplicate rating of '{}' by '{}'", origin, rec.task_id, rec.rater_id));
      }
      records_.push_back(std::move(rec));
    }
  }

  TaskSet tasks_;
  fs::path journal_;
  std::uint64_t seed_;
  mutable std::shared_mutex mu_;
  std::set<std::pair<std::string, std::string>> rated_;
  std::vector<RatingRecord> records_;
};

struct ModelScore {
  std::string model_name;
  int n = 0;
  std::array<int, 5> counts{};
  std::array<double, 5> percentages{};
  double mean = 0;
  double correctness = 0;  // 20 x mean score
};

struct CorrectnessReport {
  std::vector<ModelScore> models;  // sorted by model name
  std::optional<ModelScore> overall;
  std::vector<std::string> omitted;  // models with tasks but no ratings
};

/// Correctness of a score distribution given as percentages of ratings
/// 1..5: 20 * mean score = sum_i i * p_i / 5.
inline double correctness_from_distribution(const std::array<double, 5>& percentages) {
  double total = 0, weighted = 0;
  for (int i = 0; i < 5; ++i) {
    total += percentages[static_cast<std::size_t>(i)];
    weighted += (i + 1) * percentages[static_cast<std::size_t>(i)];
  }
  if (!(total > 0)) throw ValidationError("distribution has no mass");
  return 20.0 * weighted / total;
}

namespace detail {
inline ModelScore summarise(std::string name, const std::array<int, 5>& counts) {
  ModelScore m;
  m.model_name = std::move(name);
  m.counts = counts;
  long sum = 0;
  for (int i = 0; i < 5; ++i) {
    m.n += counts[static_cast<std::size_t>(i)];
    sum += static_cast<long>(i + 1) * counts[static_cast<std::size_t>(i)];
  }
  for (int i = 0; i < 5; ++i) {
    m.percentages[static_cast<std::size_t>(i)] = 100.0 * counts[static_cast<std::size_t>(i)] / m.n;
  }
  m.mean = static_cast<double>(sum) / m.n;
  m.correctness = 20.0 * m.mean;
  return m;
}
}  // namespace detail

/// Per-model score histograms and correctness. Only counts enter the
/// result, so record order is irrelevant.
inline CorrectnessReport aggregate(std::span<const RatingRecord> records, const TaskSet& tasks) {
  std::map<std::string, std::array<int, 5>> by_model;
  std::array<int, 5> all{};
  for (const auto& r : records) {
    validate_score(r.score);
    const auto* t = tasks.find(r.task_id);
    if (!t) throw ValidationError(fmt::format("record refers to unknown task '{}'", r.task_id));
    ++by_model[t->model_name][static_cast<std::size_t>(r.score - 1)];
    ++all[static_cast<std::size_t>(r.score - 1)];
  }
  CorrectnessReport rep;
  for (const auto& [name, counts] : by_model) rep.models.push_back(detail::summarise(name, counts));
  std::set<std::string> models_with_tasks;
  for (const auto& t : tasks.tasks) models_with_tasks.insert(t.model_name);
  for (const auto& m : models_with_tasks) {
    if (!by_model.count(m)) {
      rep.omitted.push_back(m);
      spdlog::info("model '{}' has no ratings yet; omitted from the report", m);
    }
  }
  if (!records.empty()) rep.overall = detail::summarise("overall", all);
  return rep;
}

inline ordered_json to_json(const ModelScore& m) {
  ordered_json j;
  j["n"] = m.n;
  ordered_json dist;
  for (std::size_t i = 0; i < 5; ++i) dist[std::string(kScoreLabels[i])] = m.percentages[i];
  j["distribution"] = std::move(dist);
  j["counts"] = m.counts;
  j["mean"] = m.mean;
  j["correctness"] = m.correctness;
  return j;
}

inline ordered_json to_json(const CorrectnessReport& r) {
  ordered_json j;
  ordered_json models = ordered_json::object();
  for (const auto& m : r.models) models[m.model_name] = to_json(m);
  j["models"] = std::move(models);
  j["overall"] = r.overall ? to_json(*r.overall) : ordered_json(nullptr);
  j["omitted"] = r.omitted;
  return j;
}

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"' && i + 1 < text.size() && text[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) row.push_back(std::move(field));
      if (!row.empty()) rows.push_back(std::move(row));
      row.clear();
      field.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (quoted) throw ParseError("unterminated quoted CSV field");
  if (any || !field.empty()) row.push_back(std::move(field));
  if (!row.empty()) rows.push_back(std::move(row));
  return rows;
}

inline std::vector<RatingRecord> sorted(std::span<const RatingRecord> records) {
  std::vector<RatingRecord> out(records.begin(), records.end());
  std::sort(out.begin(), out.end(), [](const RatingRecord& a, const RatingRecord& b) {
    return std::tie(a.task_id, a.rater_id) < std::tie(b.task_id, b.rater_id);
  });
  return out;
}

inline std::string model_of(const TaskSet& tasks, const std::string& task_id) {
  const auto* t = tasks.find(task_id);
  return t ? t->model_name : std::string();
}

}  // namespace detail

inline constexpr std::string_view kCsvHeader = "task_id,rater_id,model_name,score,timestamp";

/// CSV ordered by (task_id, rater_id).
inline std::string export_csv(std::span<const RatingRecord> records, const TaskSet& tasks) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& r : detail::sorted(records)) {
    out += fmt::format("{},{},{},{},{}\n", detail::csv_field(r.task_id), detail::csv_field(r.rater_id),
                       detail::csv_field(detail::model_of(tasks, r.task_id)), r.score, format_utc(r.timestamp));
  }
  return out;
}

inline std::string export_json(std::span<const RatingRecord> records, const TaskSet& tasks) {
  auto doc = ordered_json::array();
  for (const auto& r : detail::sorted(records)) {
    auto j = record_to_json(r);
    j["model_name"] = detail::model_of(tasks, r.task_id);
    doc.push_back(std::move(j));
  }
  return doc.dump(2) + "\n";
}

inline std::vector<RatingRecord> import_csv(std::string_view text) {
  const auto rows = detail::parse_csv(text);
  if (rows.empty()) throw ParseError("CSV export is empty (missing header)");
  const std::vector<std::string> header = {"task_id", "rater_id", "model_name", "score", "timestamp"};
  if (rows.front() != header) throw ParseError("unexpected CSV header");
  std::vector<RatingRecord> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 5) throw ParseError(fmt::format("CSV row {} has {} fields", i + 1, row.size()));
    int score = 0;
    try {
      std::size_t used = 0;
      score = std::stoi(row[3], &used);
      if (used != row[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(fmt::format("CSV row {}: bad score '{}'", i + 1, row[3]));
    }
    validate_score(score);
    out.push_back({row[0], row[1], score, parse_utc(row[4])});
  }
  return out;
}

inline std::vector<RatingRecord> import_json(std::string_view text) {
  const json doc = parse_json(text, "ratings export");
  if (!doc.is_array()) throw ValidationError("ratings export must be a JSON array");
  std::vector<RatingRecord> out;
  for (const auto& j : doc) out.push_back(record_from_json(j));
  return out;
}

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<fs::path> ui_dir;
};

/// HTTP front end of a RatingStore. The task payload never carries the
/// model name, so rating stays blind.
class RatingServer {
 public:
  RatingServer(RatingStore& store, ServerOptions opts) : store_(store), opts_(std::move(opts)) { routes(); }

  /// Binds the socket and returns the bound port.
  int bind() {
    if (opts_.port == 0) {
      port_ = server_.bind_to_any_port(opts_.host);
    } else {
      port_ = server_.bind_to_port(opts_.host, opts_.port) ? opts_.port : -1;
    }
    if (port_ < 0) throw IoError(fmt::format("cannot bind {}:{}", opts_.host, opts_.port));
    return port_;
  }

  /// Serves until stop() is called.
  void listen() {
    if (port_ < 0) bind();
    if (!server_.listen_after_bind()) throw IoError("rating server stopped with an error");
  }

  void stop() { server_.stop(); }
  void wait_until_ready() { server_.wait_until_ready(); }
  int port() const { return port_; }

 private:
  static void send_json(httplib::Response& res, int status, const ordered_json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void send_error(httplib::Response& res, int status, std::string_view msg) {
    send_json(res, status, ordered_json{{"error", msg}});
  }

  void routes() {
    server_.Get("/api/tasks/next", [this](const httplib::Request& req, httplib::Response& res) {
      const auto rater = req.get_param_value("rater");
      if (rater.empty()) return send_error(res, 400, "query parameter 'rater' is required");
      const auto next = store_.next_task(rater);
      ordered_json body;
      body["done"] = next.task == nullptr;
      body["total"] = next.total;
      body["rated"] = next.rated;
      if (next.task) {
        body["position"] = next.position;
        body["task"] = {{"task_id", next.task->task_id},
                        {"image_url", next.task->image_ref},
                        {"sentence", next.task->sentence}};
      }
      send_json(res, 200, body);
    });

    server_.Post("/api/ratings", [this](const httplib::Request& req, httplib::Response& res) {
      json body;
      try {
        body = json::parse(req.body);
      } catch (const json::parse_error&) {
        return send_error(res, 400, "body is not valid JSON");
      }
      if (!body.is_object() || !body.contains("task_id") || !body["task_id"].is_string() ||
          !body.contains("rater_id") || !body["rater_id"].is_string() || !body.contains("score") ||
          !body["score"].is_number_integer()) {
        return send_error(res, 400, "body needs task_id (string), rater_id (string), score (integer)");
      }
      try {
        const auto rec = store_.submit(body["task_id"].get<std::string>(), body["rater_id"].get<std::string>(),
                                       body["score"].get<int>());
        send_json(res, 200, ordered_json{{"ok", true}, {"record", record_to_json(rec)}});
      } catch (const NotFoundError& e) {
        send_error(res, 404, e.what());
      } catch (const ConflictError& e) {
        send_error(res, 409, e.what());
      } catch (const ValidationError& e) {
        send_error(res, 400, e.what());
      } catch (const IoError& e) {
        spdlog::error("journal write failed: {}", e.what());
        send_error(res, 500, "journal write failed");
      }
    });

    server_.Get("/api/stats", [this](const httplib::Request&, httplib::Response& res) {
      const auto records = store_.records();
      send_json(res, 200, to_json(aggregate(records, store_.tasks())));
    });

    server_.Get("/api/export", [this](const httplib::Request& req, httplib::Response& res) {
      const auto format = req.has_param("format") ? req.get_param_value("format") : std::string("csv");
      const auto records = store_.records();
      if (format == "csv") {
        res.set_content(export_csv(records, store_.tasks()), "text/csv");
      } else if (format == "json") {
        res.set_content(export_json(records, store_.tasks()), "application/json");
      } else {
        send_error(res, 400, fmt::format("unknown export format '{}'", format));
      }
    });

    server_.set_mount_point("/images", store_.tasks().image_root.string());
    if (opts_.ui_dir) server_.set_mount_point("/", opts_.ui_dir->string());
  }

  RatingStore& store_;
  ServerOptions opts_;
  httplib::Server server_;
  int port_ = -1;
};

}  // namespace focuskit::evalservice
