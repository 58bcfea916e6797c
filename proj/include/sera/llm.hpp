#pragma once

#include <cstdlib>
#include <filesystem>
#include <memory>
#include <optional>
#include <semaphore>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "sera/errors.hpp"
#include "sera/hash.hpp"
#include "sera/jsonl.hpp"

namespace sera {

// ---------------------------------------------------------------------------
// Gateway for chat-completion and embedding endpoints.
//
// Every model-backed operation in the pipeline (pattern analysis, reflection,
// paraphrase, similarity judging) goes through LlmClient::complete(), which
// enforces a JSON schema on the response. Record/replay fixtures keyed by a
// request hash make the whole pipeline runnable and testable offline.
// ---------------------------------------------------------------------------

enum class LlmMode { kLive, kRecord, kReplay };

enum class LlmTaskKind { kAnalyze, kReflect, kRefine, kParaphrase, kJudgeSimilarity };

inline const char* llm_task_kind_name(LlmTaskKind k) {
  switch (k) {
    case LlmTaskKind::kAnalyze: return "analyze";
    case LlmTaskKind::kReflect: return "reflect";
    case LlmTaskKind::kRefine: return "refine";
    case LlmTaskKind::kParaphrase: return "paraphrase";
    case LlmTaskKind::kJudgeSimilarity: return "judge_similarity";
  }
  return "unknown";
}

struct LlmTask {
  LlmTaskKind kind = LlmTaskKind::kAnalyze;
  std::string prompt;  // must embed the schema instruction block for schema_id
  std::string response_schema_id;
};

struct LlmHandle {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model_name = "default-model";
  std::string embed_model = "default-embed";
  std::string api_key;  // never persisted or printed
  LlmMode mode = LlmMode::kReplay;
  std::string fixture_dir;
  int max_retries = 2;
  int timeout_ms = 30000;
  int max_in_flight = 4;
};

inline LlmHandle llm_handle_from_env() {
  LlmHandle h;
  auto get = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  if (auto v = get("SERA_LLM_BASE_URL")) h.base_url = *v;
  if (auto v = get("SERA_LLM_API_KEY")) h.api_key = *v;
  if (auto v = get("SERA_LLM_MODEL")) h.model_name = *v;
  if (auto v = get("SERA_EMBED_MODEL")) h.embed_model = *v;
  if (auto v = get("SERA_FIXTURE_DIR")) h.fixture_dir = *v;
  if (auto v = get("SERA_LLM_MODE")) {
    if (*v == "live") h.mode = LlmMode::kLive;
    else if (*v == "record") h.mode = LlmMode::kRecord;
    else if (*v == "replay") h.mode = LlmMode::kReplay;
    else throw ConfigError("SERA_LLM_MODE must be live|record|replay, got '" + *v + "'");
  }
  return h;
}

// ---------------------------------------------------------------------------
// Transport. Virtual so tests can count or fake network operations.
// ---------------------------------------------------------------------------

struct HttpResult {
  bool ok = false;       // transport-level success (connection + response)
  int status = 0;
  std::string body;
  std::string error;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResult post_json(const std::string& base_url, const std::string& path,
                               const std::string& body, const std::string& api_key,
                               int timeout_ms) = 0;
};

class HttplibTransport : public HttpTransport {
 public:
  HttpResult post_json(const std::string& base_url, const std::string& path,
                       const std::string& body, const std::string& api_key,
                       int timeout_ms) override {
    httplib::Client cli(base_url);
    cli.set_connection_timeout(0, timeout_ms * 1000);
    cli.set_read_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
    httplib::Headers headers;
    if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
    auto res = cli.Post(path, headers, body, "application/json");
    HttpResult out;
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.ok = true;
    out.status = res->status;
    out.body = res->body;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Response schemas. Validation is deliberately strict: required keys, enum
// membership, types and numeric ranges. Nothing unvalidated flows downstream.
// ---------------------------------------------------------------------------

namespace detail {

inline void schema_fail(const std::string& schema_id, const std::string& what) {
  throw MalformedLlmOutputError("schema '" + schema_id + "': " + what);
}

inline const Json& require_key(const Json& obj, const char* key, const std::string& schema_id) {
  if (!obj.is_object() || !obj.contains(key))
    schema_fail(schema_id, std::string("missing required key '") + key + "'");
  return obj.at(key);
}

inline std::string require_string(const Json& obj, const char* key,
                                  const std::string& schema_id, bool non_empty = true) {
  const Json& v = require_key(obj, key, schema_id);
  if (!v.is_string()) schema_fail(schema_id, std::string("key '") + key + "' must be a string");
  auto s = v.get<std::string>();
  if (non_empty && s.empty())
    schema_fail(schema_id, std::string("key '") + key + "' must be non-empty");
  return s;
}

inline long require_integer(const Json& obj, const char* key, const std::string& schema_id,
                            long lo, long hi) {
  const Json& v = require_key(obj, key, schema_id);
  if (!v.is_number_integer())
    schema_fail(schema_id, std::string("key '") + key + "' must be an integer");
  long n = v.get<long>();
  if (n < lo || n > hi)
    schema_fail(schema_id, std::string("key '") + key + "' out of range [" +
                               std::to_string(lo) + "," + std::to_string(hi) + "]");
  return n;
}

inline bool is_one_of(const std::string& s, std::initializer_list<const char*> opts) {
  for (const char* o : opts)
    if (s == o) return true;
  return false;
}

}  // namespace detail

// Validates a parsed response document against a named schema.
// Throws MalformedLlmOutputError naming the first offending key.
inline void validate_llm_response(const std::string& schema_id, const Json& doc) {
  using detail::require_integer;
  using detail::require_key;
  using detail::require_string;
  using detail::schema_fail;

  if (schema_id == "paraphrase.v1") {
    require_string(doc, "text", schema_id);
    return;
  }
  if (schema_id == "judge.v1") {
    const Json& v = require_key(doc, "relevance", schema_id);
    if (!v.is_number()) schema_fail(schema_id, "key 'relevance' must be a number");
    double r = v.get<double>();
    if (r < 0.0 || r > 100.0) schema_fail(schema_id, "key 'relevance' out of range [0,100]");
    return;
  }
  if (schema_id == "patterns.v1") {
    const Json& arr = require_key(doc, "patterns", schema_id);
    if (!arr.is_array()) schema_fail(schema_id, "key 'patterns' must be an array");
    for (const Json& p : arr) {
      require_string(p, "pattern_id", schema_id);
      auto cat = require_string(p, "category", schema_id);
      if (!detail::is_one_of(cat, {"collision", "traffic_signal_violation", "route_deviation",
                                   "speeding"}))
        schema_fail(schema_id, "unknown category '" + cat + "'");
      if (!require_key(p, "context", schema_id).is_object())
        schema_fail(schema_id, "key 'context' must be an object");
      require_string(p, "description", schema_id);
      const Json& ev = require_key(p, "evidence", schema_id);
      if (!ev.is_array() || ev.empty())
        schema_fail(schema_id, "key 'evidence' must be a non-empty array");
      for (const Json& e : ev) {
        require_string(e, "route_id", schema_id);
        require_integer(e, "event_index", schema_id, 0, 1'000'000);
      }
      require_integer(p, "severity", schema_id, 1, 3);
    }
    return;
  }
  if (schema_id == "reflection.v1") {
    const Json& arr = require_key(doc, "suggestions", schema_id);
    if (!arr.is_array()) schema_fail(schema_id, "key 'suggestions' must be an array");
    for (const Json& s : arr) {
      auto op = require_string(s, "op", schema_id);
      if (!detail::is_one_of(op, {"replace", "augment", "prioritize"}))
        schema_fail(schema_id, "unknown op '" + op + "'");
      if (op == "replace" || op == "prioritize") require_string(s, "target_scenario_id", schema_id);
      if (op == "replace" || op == "augment") require_string(s, "replacement_or_added_id", schema_id);
      if (op == "augment") require_string(s, "pattern_id", schema_id);
      require_string(s, "rationale", schema_id, /*non_empty=*/false);
    }
    return;
  }
  schema_fail(schema_id, "unknown schema id");
}

// Appended to every prompt; the model must answer with one fenced JSON object.
inline std::string schema_instruction_block(const std::string& schema_id) {
  return "\n\nRespond with exactly one fenced JSON code block (```json ... ```) "
         "containing a single object that conforms to response schema '" +
         schema_id + "'. No prose outside the fence.";
}

// First fenced code block, or the whole body when no fence is present.
inline std::string extract_fenced_block(const std::string& content) {
  auto open = content.find("```");
  if (open == std::string::npos) return content;
  auto body_start = content.find('\n', open);
  if (body_start == std::string::npos) return content;
  ++body_start;
  auto close = content.find("```", body_start);
  if (close == std::string::npos) return content.substr(body_start);
  return content.substr(body_start, close - body_start);
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

class LlmClient {
 public:
  explicit LlmClient(LlmHandle handle, std::shared_ptr<HttpTransport> transport = nullptr)
      : handle_(std::move(handle)), transport_(std::move(transport)) {
    if (transport_ == nullptr && handle_.mode != LlmMode::kReplay)
      transport_ = std::make_shared<HttplibTransport>();
    in_flight_ = std::make_unique<std::counting_semaphore<>>(
        std::max(1, handle_.max_in_flight));
  }

  const LlmHandle& handle() const { return handle_; }

  // The fixture key. The full prompt (which embeds the schema block) and the
  // model name participate, so any prompt change invalidates old fixtures.
  static std::string request_hash(const LlmTask& task, const std::string& model) {
    std::string material;
    material += llm_task_kind_name(task.kind);
    material += '\x1f';
    material += model;
    material += '\x1f';
    material += task.response_schema_id;
    material += '\x1f';
    material += task.prompt;
    return hex64(fnv1a64(material));
  }

  static std::string embed_request_hash(const std::string& text, const std::string& model) {
    return hex64(fnv1a64("embed\x1f" + model + "\x1f" + text));
  }

  // Runs the task and returns the schema-validated JSON document.
  // Re-prompts with the validation error appended, up to max_retries times.
  Json complete(const LlmTask& task) {
    std::string prompt = task.prompt;
    std::optional<MalformedLlmOutputError> last_error;
    for (int attempt = 0; attempt <= handle_.max_retries; ++attempt) {
      LlmTask attempt_task = task;
      attempt_task.prompt = prompt;
      std::optional<std::string> raw = fetch_chat_content(attempt_task, attempt > 0);
      if (!raw.has_value()) break;  // replay retry fixture absent; report last error
      try {
        Json doc = Json::parse(extract_fenced_block(*raw), nullptr, false);
        if (doc.is_discarded())
          throw MalformedLlmOutputError("schema '" + task.response_schema_id +
                                        "': response is not valid JSON");
        validate_llm_response(task.response_schema_id, doc);
        return doc;
      } catch (const MalformedLlmOutputError& e) {
        last_error = e;
        prompt = task.prompt + "\n\nYour previous reply was rejected: " + e.what() +
                 "\nReturn only the corrected fenced JSON object.";
      }
    }
    throw *last_error;
  }

  // Raw embedding vector from the embeddings endpoint (callers re-normalize).
  std::vector<double> embed_text(const std::string& text) {
    const std::string key = embed_request_hash(text, handle_.embed_model);
    if (handle_.mode == LlmMode::kReplay) {
      Json fx = load_fixture(key);
      return fx.at("response").get<std::vector<double>>();
    }
    Json body = {{"model", handle_.embed_model}, {"input", Json::array({text})}};
    Json resp = post_or_throw("/v1/embeddings", body);
    std::vector<double> vec;
    try {
      vec = resp.at("data").at(0).at("embedding").get<std::vector<double>>();
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLlmOutputError(std::string("embedding response shape: ") + e.what());
    }
    if (handle_.mode == LlmMode::kRecord) {
      Json fx{{"kind", "embedding"}, {"model", handle_.embed_model}, {"text", text},
              {"response", vec}};
      save_fixture(key, fx);
    }
    return vec;
  }

 private:
  std::string fixture_path(const std::string& key) const {
    return (std::filesystem::path(handle_.fixture_dir) / (key + ".json")).string();
  }

  Json load_fixture(const std::string& key) const {
    const std::string path = fixture_path(key);
    if (!std::filesystem::exists(path))
      throw FixtureMissingError("no fixture '" + key + "' under '" + handle_.fixture_dir + "'");
    Json fx = Json::parse(read_file(path), nullptr, false);
    if (fx.is_discarded() || !fx.contains("response"))
      throw FixtureMissingError("fixture '" + key + "' is unreadable");
    return fx;
  }

  void save_fixture(const std::string& key, const Json& fx) const {
    std::filesystem::create_directories(handle_.fixture_dir);
    write_file(fixture_path(key), fx.dump(2) + "\n");
  }

  Json post_or_throw(const std::string& path, const Json& body) {
    in_flight_->acquire();
    HttpResult res;
    try {
      res = transport_->post_json(handle_.base_url, path, body.dump(), handle_.api_key,
                                  handle_.timeout_ms);
    } catch (...) {
      in_flight_->release();
      throw;
    }
    in_flight_->release();
    if (!res.ok) throw LlmUnavailableError("transport: " + res.error);
    if (res.status != 200)
      throw LlmUnavailableError("endpoint returned HTTP " + std::to_string(res.status));
    Json doc = Json::parse(res.body, nullptr, false);
    if (doc.is_discarded()) throw LlmUnavailableError("endpoint returned non-JSON body");
    return doc;
  }

  // One chat attempt. Replay never touches the transport; a missing fixture on
  // a retry attempt returns nullopt so the original validation error surfaces.
  std::optional<std::string> fetch_chat_content(const LlmTask& task, bool is_retry) {
    const std::string key = request_hash(task, handle_.model_name);
    if (handle_.mode == LlmMode::kReplay) {
      if (is_retry && !std::filesystem::exists(fixture_path(key))) return std::nullopt;
      Json fx = load_fixture(key);
      if (!fx.at("response").is_string())
        throw FixtureMissingError("fixture '" + key + "' has no string response");
      return fx.at("response").get<std::string>();
    }
    Json body = {{"model", handle_.model_name},
                 {"messages", Json::array({Json{{"role", "user"}, {"content", task.prompt}}})},
                 {"temperature", 0},
                 {"seed", 0}};
    Json resp = post_or_throw("/v1/chat/completions", body);
    std::string content;
    try {
      content = resp.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLlmOutputError(std::string("completion response shape: ") + e.what());
    }
    if (handle_.mode == LlmMode::kRecord) {
      // Persist before validation so bad responses are kept for inspection.
      Json fx{{"kind", "chat"},
              {"task_kind", llm_task_kind_name(task.kind)},
              {"model", handle_.model_name},
              {"schema_id", task.response_schema_id},
              {"prompt", task.prompt},
              {"response", content}};
      save_fixture(key, fx);
    }
    return content;
  }

  LlmHandle handle_;
  std::shared_ptr<HttpTransport> transport_;
  std::unique_ptr<std::counting_semaphore<>> in_flight_;
};

}  // namespace sera
