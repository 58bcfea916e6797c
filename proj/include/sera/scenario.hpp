#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "sera/errors.hpp"
#include "sera/hash.hpp"
#include "sera/jsonl.hpp"
#include "sera/llm.hpp"

namespace sera {

// ---------------------------------------------------------------------------
// Structured scenario attributes and their deterministic rendering into text.
// The rendered text is what retrieval and the language model reason over.
// ---------------------------------------------------------------------------

enum class Weather { kClear, kRain, kFog, kSnow };
enum class TimeOfDay { kDay, kNight, kDawn, kDusk };
enum class Location { kUrbanIntersection, kHighway, kRoundabout, kMergeRamp, kResidential };

// Enum <-> token tables. The token is the canonical wire form; the surface
// form is what appears in rendered text. Closed sets: unknown tokens reject.
inline const char* weather_token(Weather w) {
  switch (w) {
    case Weather::kClear: return "clear";
    case Weather::kRain: return "rain";
    case Weather::kFog: return "fog";
    case Weather::kSnow: return "snow";
  }
  return "clear";
}

inline Weather weather_from_token(const std::string& s) {
  if (s == "clear") return Weather::kClear;
  if (s == "rain") return Weather::kRain;
  if (s == "fog") return Weather::kFog;
  if (s == "snow") return Weather::kSnow;
  throw SchemaError(0, "weather", "unknown value '" + s + "'");
}

inline const char* time_token(TimeOfDay t) {
  switch (t) {
    case TimeOfDay::kDay: return "day";
    case TimeOfDay::kNight: return "night";
    case TimeOfDay::kDawn: return "dawn";
    case TimeOfDay::kDusk: return "dusk";
  }
  return "day";
}

inline TimeOfDay time_from_token(const std::string& s) {
  if (s == "day") return TimeOfDay::kDay;
  if (s == "night") return TimeOfDay::kNight;
  if (s == "dawn") return TimeOfDay::kDawn;
  if (s == "dusk") return TimeOfDay::kDusk;
  throw SchemaError(0, "time", "unknown value '" + s + "'");
}

inline const char* location_token(Location l) {
  switch (l) {
    case Location::kUrbanIntersection: return "urban_intersection";
    case Location::kHighway: return "highway";
    case Location::kRoundabout: return "roundabout";
    case Location::kMergeRamp: return "merge_ramp";
    case Location::kResidential: return "residential";
  }
  return "highway";
}

inline Location location_from_token(const std::string& s) {
  if (s == "urban_intersection") return Location::kUrbanIntersection;
  if (s == "highway") return Location::kHighway;
  if (s == "roundabout") return Location::kRoundabout;
  if (s == "merge_ramp") return Location::kMergeRamp;
  if (s == "residential") return Location::kResidential;
  throw SchemaError(0, "location", "unknown value '" + s + "'");
}

// Surface forms used by the rendering template.
inline const char* location_surface(Location l) {
  switch (l) {
    case Location::kUrbanIntersection: return "an urban intersection";
    case Location::kHighway: return "a highway";
    case Location::kRoundabout: return "a roundabout";
    case Location::kMergeRamp: return "a merge ramp";
    case Location::kResidential: return "a residential street";
  }
  return "a highway";
}

constexpr std::size_t kSceneNoteMaxChars = 280;

struct ScenarioAttributes {
  Weather weather = Weather::kClear;
  TimeOfDay time = TimeOfDay::kDay;
  Location location = Location::kHighway;
  std::vector<std::string> scene_tags;  // lowercase tokens, sorted, deduplicated
  std::string scene_note;               // optional free text, <= 280 chars

  bool operator==(const ScenarioAttributes&) const = default;
};

// Sorts and deduplicates tags, lowercases them, checks the note length.
inline ScenarioAttributes normalize(ScenarioAttributes attrs) {
  for (auto& tag : attrs.scene_tags) {
    std::transform(tag.begin(), tag.end(), tag.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  }
  std::sort(attrs.scene_tags.begin(), attrs.scene_tags.end());
  attrs.scene_tags.erase(std::unique(attrs.scene_tags.begin(), attrs.scene_tags.end()),
                         attrs.scene_tags.end());
  if (attrs.scene_note.size() > kSceneNoteMaxChars)
    throw SchemaError(0, "scene_note", "exceeds 280 characters");
  return attrs;
}

inline bool is_normalized(const ScenarioAttributes& attrs) {
  if (!std::is_sorted(attrs.scene_tags.begin(), attrs.scene_tags.end())) return false;
  if (std::adjacent_find(attrs.scene_tags.begin(), attrs.scene_tags.end()) !=
      attrs.scene_tags.end())
    return false;
  return attrs.scene_note.size() <= kSceneNoteMaxChars;
}

// Canonical serialization; the bank's content hash is computed over this.
inline std::string canonical_attribute_string(const ScenarioAttributes& a) {
  std::string s;
  s += "weather=";
  s += weather_token(a.weather);
  s += ";time=";
  s += time_token(a.time);
  s += ";location=";
  s += location_token(a.location);
  s += ";tags=";
  for (std::size_t i = 0; i < a.scene_tags.size(); ++i) {
    if (i) s += ',';
    s += a.scene_tags[i];
  }
  s += ";note=";
  s += a.scene_note;
  return s;
}

inline std::uint64_t attribute_content_hash(const ScenarioAttributes& a) {
  return fnv1a64(canonical_attribute_string(a));
}

inline Json attributes_to_json(const ScenarioAttributes& a) {
  Json j{{"weather", weather_token(a.weather)},
         {"time", time_token(a.time)},
         {"location", location_token(a.location)},
         {"scene_tags", a.scene_tags}};
  if (!a.scene_note.empty()) j["scene_note"] = a.scene_note;
  return j;
}

inline ScenarioAttributes attributes_from_json(const Json& j, int line_no = 0) {
  ScenarioAttributes a;
  a.weather = weather_from_token(require_field<std::string>(j, "weather", line_no));
  a.time = time_from_token(require_field<std::string>(j, "time", line_no));
  a.location = location_from_token(require_field<std::string>(j, "location", line_no));
  if (j.contains("scene_tags"))
    a.scene_tags = require_field<std::vector<std::string>>(j, "scene_tags", line_no);
  if (j.contains("scene_note"))
    a.scene_note = require_field<std::string>(j, "scene_note", line_no);
  return normalize(std::move(a));
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

enum class TextProvenance { kTemplate, kLlmParaphrase };

inline const char* provenance_token(TextProvenance p) {
  return p == TextProvenance::kTemplate ? "template" : "llm_paraphrase";
}

inline TextProvenance provenance_from_token(const std::string& s) {
  if (s == "template") return TextProvenance::kTemplate;
  if (s == "llm_paraphrase") return TextProvenance::kLlmParaphrase;
  throw SchemaError(0, "provenance", "unknown value '" + s + "'");
}

struct ScenarioText {
  std::string scenario_id;  // may be empty until the bank assigns one
  std::string text;
  TextProvenance provenance = TextProvenance::kTemplate;

  bool operator==(const ScenarioText&) const = default;
};

inline std::string tag_surface(const std::string& tag) {
  std::string s = tag;
  std::replace(s.begin(), s.end(), '_', ' ');
  return s;
}

// Fixed template, one sentence per attribute group in order
// weather / time / location / scene, plus the note verbatim when present.
// Pure: identical attributes give byte-identical text.
inline ScenarioText describe(const ScenarioAttributes& attrs) {
  std::string text = "The weather is ";
  text += weather_token(attrs.weather);
  text += ". It is ";
  text += time_token(attrs.time);
  text += ". The route passes through ";
  text += location_surface(attrs.location);
  text += ".";
  if (!attrs.scene_tags.empty()) {
    text += " The scene involves ";
    for (std::size_t i = 0; i < attrs.scene_tags.size(); ++i) {
      if (i) text += ", ";
      text += tag_surface(attrs.scene_tags[i]);
    }
    text += ".";
  }
  if (!attrs.scene_note.empty()) {
    text += " ";
    text += attrs.scene_note;
  }
  return ScenarioText{"", text, TextProvenance::kTemplate};
}

inline std::string paraphrase_prompt(const ScenarioAttributes& attrs) {
  std::string p =
      "Rewrite the following driving scenario description as one vivid paragraph, "
      "preserving every stated condition:\n\n" +
      describe(attrs).text;
  p += schema_instruction_block("paraphrase.v1");
  p += "\nSchema: {\"text\": string}";
  return p;
}

// Optional richer rendering through the model. When fallback is enabled any
// gateway failure degrades to the template text instead of propagating.
inline ScenarioText paraphrase(const ScenarioAttributes& attrs, LlmClient& llm,
                               bool fallback_to_template = true) {
  LlmTask task{LlmTaskKind::kParaphrase, paraphrase_prompt(attrs), "paraphrase.v1"};
  try {
    Json doc = llm.complete(task);
    return ScenarioText{"", doc.at("text").get<std::string>(), TextProvenance::kLlmParaphrase};
  } catch (const Error& e) {
    if (fallback_to_template &&
        (e.code() == ErrorCode::kLlmUnavailable || e.code() == ErrorCode::kMalformedLlmOutput ||
         e.code() == ErrorCode::kFixtureMissing))
      return describe(attrs);
    throw;
  }
}

}  // namespace sera
