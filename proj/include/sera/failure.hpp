#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "sera/errors.hpp"
#include "sera/harness.hpp"
#include "sera/jsonl.hpp"
#include "sera/llm.hpp"
#include "sera/scenario.hpp"

namespace sera {

// ---------------------------------------------------------------------------
// Failure-pattern extraction from performance logs. Two extractors share one
// output type: a model-backed one for live runs and a deterministic
// rule-based one used for tests, fallback and seeded experiments.
// ---------------------------------------------------------------------------

enum class FailureCategory { kCollision, kTrafficSignalViolation, kRouteDeviation, kSpeeding };

inline const char* failure_category_token(FailureCategory c) {
  switch (c) {
    case FailureCategory::kCollision: return "collision";
    case FailureCategory::kTrafficSignalViolation: return "traffic_signal_violation";
    case FailureCategory::kRouteDeviation: return "route_deviation";
    case FailureCategory::kSpeeding: return "speeding";
  }
  return "collision";
}

inline FailureCategory failure_category_from_token(const std::string& s) {
  if (s == "collision") return FailureCategory::kCollision;
  if (s == "traffic_signal_violation") return FailureCategory::kTrafficSignalViolation;
  if (s == "route_deviation") return FailureCategory::kRouteDeviation;
  if (s == "speeding") return FailureCategory::kSpeeding;
  throw SchemaError(0, "category", "unknown value '" + s + "'");
}

inline FailureCategory category_for_event_kind(const std::string& kind) {
  if (kind == "collision") return FailureCategory::kCollision;
  if (kind == "red_light") return FailureCategory::kTrafficSignalViolation;
  if (kind == "route_deviation") return FailureCategory::kRouteDeviation;
  return FailureCategory::kSpeeding;
}

// Only the attribute fields implicated by a pattern are present.
struct PartialContext {
  std::optional<Weather> weather;
  std::optional<TimeOfDay> time;
  std::optional<Location> location;
  std::vector<std::string> scene_tags;

  bool operator==(const PartialContext&) const = default;
};

struct EvidenceRef {
  std::string route_id;
  int event_index = 0;

  bool operator==(const EvidenceRef&) const = default;
  auto operator<=>(const EvidenceRef&) const = default;
};

struct FailurePattern {
  std::string pattern_id;
  FailureCategory category = FailureCategory::kCollision;
  PartialContext context;
  std::string description;  // doubles as the pattern text fed to phi
  std::vector<EvidenceRef> evidence;
  int severity = 1;  // 3 collision, 2 red light, 1 otherwise

  bool operator==(const FailurePattern&) const = default;
};

inline int severity_for_category(FailureCategory c) {
  switch (c) {
    case FailureCategory::kCollision: return 3;
    case FailureCategory::kTrafficSignalViolation: return 2;
    default: return 1;
  }
}

inline std::string failure_phrase(FailureCategory c) {
  switch (c) {
    case FailureCategory::kCollision: return "collision with an obstacle";
    case FailureCategory::kTrafficSignalViolation: return "ran a red light";
    case FailureCategory::kRouteDeviation: return "deviated from the route";
    case FailureCategory::kSpeeding: return "exceeded the speed limit";
  }
  return "failure";
}

// ---------------------------------------------------------------------------
// Rule-based extractor: groups failure events by (category, weather, time).
// Deterministic and permutation-invariant in the log order.
// ---------------------------------------------------------------------------

inline std::vector<FailurePattern> extract_patterns_rules(
    const std::vector<PerformanceLog>& logs) {
  using GroupKey = std::tuple<int, int, int>;  // category, weather, time
  std::map<GroupKey, std::vector<EvidenceRef>> groups;
  std::map<GroupKey, std::pair<Weather, TimeOfDay>> conditions;

  for (const auto& log : logs) {
    for (std::size_t i = 0; i < log.events.size(); ++i) {
      const FailureCategory cat = category_for_event_kind(log.events[i].kind);
      GroupKey key{static_cast<int>(cat), static_cast<int>(log.conditions.weather),
                   static_cast<int>(log.conditions.time)};
      groups[key].push_back(EvidenceRef{log.route_id, static_cast<int>(i)});
      conditions[key] = {log.conditions.weather, log.conditions.time};
    }
  }

  std::vector<FailurePattern> patterns;
  int seq = 0;
  for (auto& [key, evidence] : groups) {
    const auto cat = static_cast<FailureCategory>(std::get<0>(key));
    const auto [weather, time] = conditions[key];
    FailurePattern p;
    ++seq;
    std::string num = std::to_string(seq);
    while (num.size() < 3) num.insert(num.begin(), '0');
    p.pattern_id = "p" + num;
    p.category = cat;
    p.context.weather = weather;
    p.context.time = time;
    p.description = failure_phrase(cat) + " under " + weather_token(weather) + " at " +
                    std::string(time_token(time));
    std::sort(evidence.begin(), evidence.end());
    p.evidence = std::move(evidence);
    p.severity = severity_for_category(cat);
    patterns.push_back(std::move(p));
  }
  // std::map already iterates in (category, weather, time) order.
  return patterns;
}

// ---------------------------------------------------------------------------
// Model-backed extractor
// ---------------------------------------------------------------------------

inline std::string analyze_prompt(const std::vector<PerformanceLog>& logs) {
  Json serialized = Json::array();
  for (const auto& log : logs) serialized.push_back(log_to_json(log));
  std::string p =
      "You are auditing an autonomous driving policy. Below are structured "
      "performance logs from pre-evaluation, including infraction events and the "
      "route conditions they occurred under. Identify the distinct failure "
      "patterns: each pattern names a category, the implicated conditions, a "
      "one-sentence description, the supporting evidence (route_id and event "
      "index), and a severity from 1 to 3.\n\nLogs:\n" +
      serialized.dump(2);
  p += schema_instruction_block("patterns.v1");
  p += "\nSchema: {\"patterns\": [{\"pattern_id\": string, \"category\": "
       "\"collision\"|\"traffic_signal_violation\"|\"route_deviation\"|\"speeding\", "
       "\"context\": {\"weather\"?: string, \"time\"?: string, \"location\"?: string, "
       "\"scene_tags\"?: [string]}, \"description\": string, "
       "\"evidence\": [{\"route_id\": string, \"event_index\": integer}], "
       "\"severity\": 1|2|3}]}";
  return p;
}

inline PartialContext partial_context_from_json(const Json& j) {
  PartialContext ctx;
  if (j.contains("weather")) ctx.weather = weather_from_token(j.at("weather").get<std::string>());
  if (j.contains("time")) ctx.time = time_from_token(j.at("time").get<std::string>());
  if (j.contains("location"))
    ctx.location = location_from_token(j.at("location").get<std::string>());
  if (j.contains("scene_tags")) ctx.scene_tags = j.at("scene_tags").get<std::vector<std::string>>();
  return ctx;
}

inline Json partial_context_to_json(const PartialContext& ctx) {
  Json j = Json::object();
  if (ctx.weather) j["weather"] = weather_token(*ctx.weather);
  if (ctx.time) j["time"] = time_token(*ctx.time);
  if (ctx.location) j["location"] = location_token(*ctx.location);
  if (!ctx.scene_tags.empty()) j["scene_tags"] = ctx.scene_tags;
  return j;
}

// Extracts patterns through the gateway. Evidence references are checked
// against the logs; anything dangling is a malformed response, not a crash.
inline std::vector<FailurePattern> extract_patterns_llm(
    const std::vector<PerformanceLog>& logs, LlmClient& llm) {
  if (logs.empty()) return {};
  std::size_t total_events = 0;
  for (const auto& log : logs) total_events += log.events.size();
  if (total_events == 0) return {};  // nothing to analyze, skip the call

  LlmTask task{LlmTaskKind::kAnalyze, analyze_prompt(logs), "patterns.v1"};
  Json doc = llm.complete(task);

  std::map<std::string, std::size_t> event_counts;
  for (const auto& log : logs) event_counts[log.route_id] = log.events.size();

  std::vector<FailurePattern> patterns;
  std::map<std::string, bool> seen_ids;
  for (const Json& pj : doc.at("patterns")) {
    FailurePattern p;
    p.pattern_id = pj.at("pattern_id").get<std::string>();
    if (seen_ids[p.pattern_id])
      throw MalformedLlmOutputError("duplicate pattern_id '" + p.pattern_id + "'");
    seen_ids[p.pattern_id] = true;
    p.category = failure_category_from_token(pj.at("category").get<std::string>());
    try {
      p.context = partial_context_from_json(pj.at("context"));
    } catch (const SchemaError& e) {
      throw MalformedLlmOutputError(std::string("pattern context: ") + e.what());
    }
    p.description = pj.at("description").get<std::string>();
    for (const Json& ej : pj.at("evidence")) {
      EvidenceRef ref{ej.at("route_id").get<std::string>(), ej.at("event_index").get<int>()};
      auto it = event_counts.find(ref.route_id);
      if (it == event_counts.end())
        throw MalformedLlmOutputError("evidence references unknown route '" + ref.route_id + "'");
      if (ref.event_index < 0 || static_cast<std::size_t>(ref.event_index) >= it->second)
        throw MalformedLlmOutputError("evidence index " + std::to_string(ref.event_index) +
                                      " out of range for route '" + ref.route_id + "'");
      p.evidence.push_back(ref);
    }
    p.severity = pj.at("severity").get<int>();
    patterns.push_back(std::move(p));
  }
  return patterns;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json pattern_to_json(const FailurePattern& p) {
  Json evidence = Json::array();
  for (const auto& e : p.evidence)
    evidence.push_back(Json{{"route_id", e.route_id}, {"event_index", e.event_index}});
  return Json{{"pattern_id", p.pattern_id},
              {"category", failure_category_token(p.category)},
              {"context", partial_context_to_json(p.context)},
              {"description", p.description},
              {"evidence", evidence},
              {"severity", p.severity}};
}

inline FailurePattern pattern_from_json(const Json& j, int line_no = 0) {
  FailurePattern p;
  p.pattern_id = require_field<std::string>(j, "pattern_id", line_no);
  p.category = failure_category_from_token(require_field<std::string>(j, "category", line_no));
  if (j.contains("context")) p.context = partial_context_from_json(j.at("context"));
  p.description = require_field<std::string>(j, "description", line_no);
  if (!j.contains("evidence")) throw SchemaError(line_no, "evidence", "missing required field");
  for (const Json& e : j.at("evidence"))
    p.evidence.push_back(EvidenceRef{require_field<std::string>(e, "route_id", line_no),
                                     require_field<int>(e, "event_index", line_no)});
  p.severity = require_field<int>(j, "severity", line_no);
  if (p.severity < 1 || p.severity > 3)
    throw SchemaError(line_no, "severity", "must be in {1,2,3}");
  if (p.evidence.empty()) throw SchemaError(line_no, "evidence", "must be non-empty");
  if (p.description.empty()) throw SchemaError(line_no, "description", "must be non-empty");
  return p;
}

inline std::vector<FailurePattern> load_patterns(const std::string& path) {
  std::vector<FailurePattern> patterns;
  for_each_jsonl(path, [&](int line_no, const Json& obj) {
    patterns.push_back(pattern_from_json(obj, line_no));
  });
  return patterns;
}

inline void save_patterns(const std::string& path, const std::vector<FailurePattern>& patterns) {
  std::vector<Json> rows;
  rows.reserve(patterns.size());
  for (const auto& p : patterns) rows.push_back(pattern_to_json(p));
  save_jsonl(path, rows);
}

}  // namespace sera
