#pragma once

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>
#include <spdlog/spdlog.h>

#include "focuskit/dataset.hpp"
#include "focuskit/error.hpp"
#include "focuskit/prompting.hpp"
#include "focuskit/util.hpp"

namespace focuskit::llm {

using Millis = std::chrono::milliseconds;
using Sleeper = std::function<void(Millis)>;

struct LlmConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-4";
  std::string api_key_env = "OPENAI_API_KEY";
  int max_retries = 3;
  Millis timeout{60000};
  std::optional<double> temperature;
  Millis backoff_base{500};
};

inline void validate(const LlmConfig& c) {
  if (c.max_retries < 0) throw ValidationError("max_retries must be >= 0");
  if (c.base_url.find("://") == std::string::npos) {
    throw ValidationError(fmt::format("base_url '{}' lacks a scheme", c.base_url));
  }
  if (c.model_name.empty()) throw ValidationError("model_name is empty");
  if (c.api_key_env.empty()) throw ValidationError("api_key_env is empty");
  if (c.timeout.count() <= 0) throw ValidationError("timeout must be positive");
}

inline LlmConfig config_from_json(const json& j, LlmConfig c = {}) {
  if (!j.is_object()) throw ValidationError("LLM config must be a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "base_url") c.base_url = value.get<std::string>();
      else if (key == "model_name") c.model_name = value.get<std::string>();
      else if (key == "api_key_env") c.api_key_env = value.get<std::string>();
      else if (key == "max_retries") c.max_retries = value.get<int>();
      else if (key == "timeout_ms") c.timeout = Millis(value.get<long>());
      else if (key == "backoff_ms") c.backoff_base = Millis(value.get<long>());
      else if (key == "temperature") c.temperature = value.is_null() ? std::nullopt : std::optional(value.get<double>());
      else throw ValidationError(fmt::format("unknown LLM config key '{}'", key));
    }
  } catch (const json::type_error& e) {
    throw ValidationError(fmt::format("LLM config: {}", e.what()));
  }
  validate(c);
  return c;
}

inline ordered_json to_json(const LlmConfig& c) {
  ordered_json j;
  j["base_url"] = c.base_url;
  j["model_name"] = c.model_name;
  j["api_key_env"] = c.api_key_env;
  j["max_retries"] = c.max_retries;
  j["timeout_ms"] = c.timeout.count();
  j["backoff_ms"] = c.backoff_base.count();
  j["temperature"] = c.temperature ? ordered_json(*c.temperature) : ordered_json(nullptr);
  return j;
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // full request path
};

inline Endpoint chat_endpoint(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError(fmt::format("base_url '{}' lacks a scheme", base_url));
  const auto slash = base_url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = base_url.substr(0, slash);
  std::string prefix = slash == std::string::npos ? "" : base_url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  e.path = prefix + "/chat/completions";
  return e;
}

inline ordered_json chat_request_body(const LlmConfig& cfg, const prompting::PromptBundle& bundle) {
  ordered_json body;
  body["model"] = cfg.model_name;
  auto messages = ordered_json::array();
  if (!bundle.system_prompt.empty()) messages.push_back({{"role", "system"}, {"content", bundle.system_prompt}});
  messages.push_back({{"role", "user"}, {"content", bundle.user_prompt}});
  body["messages"] = std::move(messages);
  if (cfg.temperature) body["temperature"] = *cfg.temperature;
  return body;
}

inline bool transient_status(int status) { return status == 429 || (status >= 500 && status <= 599); }

/// Sends one chat-completion request and returns the assistant text.
/// Transient failures (connection errors, 429, 5xx) are retried with
/// exponential backoff; authentication failures are not.
inline std::string request_description(const LlmConfig& cfg, const prompting::PromptBundle& bundle,
                                       const Sleeper& sleep = {}) {
  validate(cfg);
  const char* key = std::getenv(cfg.api_key_env.c_str());
  if (key == nullptr || *key == '\0') {
    throw CredentialError(fmt::format("environment variable {} is not set", cfg.api_key_env));
  }
  const Endpoint ep = chat_endpoint(cfg.base_url);
  httplib::Client client(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout).count();
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout).count() % 1000000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  const httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};
  const std::string body = chat_request_body(cfg, bundle).dump();

  std::string last_error;
  for (int attempt = 0;; ++attempt) {
    auto res = client.Post(ep.path, headers, body, "application/json");
    if (res && res->status == 200) {
      json doc;
      try {
        doc = json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw DecodeError(fmt::format("sample {}: undecodable completion: {}", bundle.sample_id, e.what()));
      }
      std::string text;
      try {
        const auto& content = doc.at("choices").at(0).at("message").at("content");
        if (content.is_string()) text = content.get<std::string>();
      } catch (const json::exception&) {
      }
      const auto request_id = res->get_header_value("x-request-id");
      if (doc.contains("usage") && doc["usage"].is_object()) {
        spdlog::info("completion sample={} request_id={} prompt_tokens={} completion_tokens={}", bundle.sample_id,
                     request_id.empty() ? "-" : request_id, doc["usage"].value("prompt_tokens", -1),
                     doc["usage"].value("completion_tokens", -1));
      } else {
        spdlog::info("completion sample={} request_id={}", bundle.sample_id, request_id.empty() ? "-" : request_id);
      }
      if (text.empty()) throw EmptyResponseError(fmt::format("sample {}: empty completion", bundle.sample_id));
      return text;
    }
    if (res && (res->status == 401 || res->status == 403)) {
      throw CredentialError(fmt::format("endpoint rejected credentials (HTTP {})", res->status));
    }
    if (res && !transient_status(res->status)) {
      throw TransportError(fmt::format("sample {}: HTTP {}", bundle.sample_id, res->status));
    }
    last_error = res ? fmt::format("HTTP {}", res->status) : httplib::to_string(res.error());
    if (attempt >= cfg.max_retries) break;
    const Millis delay = cfg.backoff_base * (1LL << std::min(attempt, 16));
    spdlog::warn("sample {}: {} (attempt {}), retrying in {} ms", bundle.sample_id, last_error, attempt + 1,
                 delay.count());
    if (sleep) sleep(delay);
    else std::this_thread::sleep_for(delay);
  }
  throw TransportError(
      fmt::format("sample {}: giving up after {} retries: {}", bundle.sample_id, cfg.max_retries, last_error));
}

struct CaptionReport {
  int success = 0;
  int skipped = 0;
  int failed = 0;
  std::vector<std::pair<std::string, std::string>> failures;  // (image id, reason)
};

inline ordered_json to_json(const CaptionReport& r) {
  ordered_json j;
  j["success"] = r.success;
  j["skipped"] = r.skipped;
  j["failed"] = r.failed;
  auto f = ordered_json::array();
  for (const auto& [id, why] : r.failures) f.push_back({{"image", id}, {"error", why}});
  j["failures"] = std::move(f);
  return j;
}

struct CaptionOptions {
  int concurrency = 1;
  Sleeper sleep;
};

/// Captions every sample not already present in `out_path`. Successful
/// descriptions are written through a single mutex-guarded writer that
/// rewrites the file atomically after each one, so an interrupted run
/// resumes where it stopped. Per-sample failures are reported, not thrown;
/// credential errors abort the run.
inline CaptionReport caption_dataset(const LlmConfig& cfg, const prompting::PromptSpec& spec,
                                     const std::vector<Sample>& samples, const fs::path& out_path,
                                     const CaptionOptions& opts = {}) {
  if (samples.empty()) throw ValidationError("caption_dataset needs at least one sample");
  if (opts.concurrency < 1) throw ValidationError("concurrency must be >= 1");
  std::vector<Description> written;
  if (fs::exists(out_path)) written = load_descriptions(out_path);
  std::set<std::string> done;
  for (const auto& d : written) done.insert(d.image_id);

  CaptionReport report;
  std::vector<const Sample*> todo;
  for (const auto& s : samples) {
    if (done.count(s.image_id)) ++report.skipped;
    else todo.push_back(&s);
  }

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::exception_ptr fatal;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      {
        std::lock_guard lock(mu);
        if (fatal) return;
      }
      const Sample& s = *todo[i];
      try {
        const auto text = request_description(cfg, prompting::build_mpii_prompt(spec, s), opts.sleep);
        std::lock_guard lock(mu);
        written.push_back({s.image_id, text});
        write_descriptions(out_path, written);
        ++report.success;
      } catch (const CredentialError&) {
        std::lock_guard lock(mu);
        if (!fatal) fatal = std::current_exception();
        return;
      } catch (const IoError& e) {
        // A failed write of the output file is fatal; LLM transport errors are per-sample.
        std::lock_guard lock(mu);
        if (dynamic_cast<const TransportError*>(&e) || dynamic_cast<const EmptyResponseError*>(&e) ||
            dynamic_cast<const DecodeError*>(&e)) {
          ++report.failed;
          report.failures.emplace_back(s.image_id, e.what());
        } else if (!fatal) {
          fatal = std::current_exception();
          return;
        }
      } catch (const ValidationError& e) {
        std::lock_guard lock(mu);
        ++report.failed;
        report.failures.emplace_back(s.image_id, e.what());
      }
    }
  };
  const int n = std::min<int>(opts.concurrency, static_cast<int>(std::max<std::size_t>(todo.size(), 1)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (fatal) std::rethrow_exception(fatal);
  std::sort(report.failures.begin(), report.failures.end());
  return report;
}

}  // namespace focuskit::llm
