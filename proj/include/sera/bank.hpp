#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sera/embed.hpp"
#include "sera/errors.hpp"
#include "sera/jsonl.hpp"
#include "sera/scenario.hpp"

namespace sera {

// ---------------------------------------------------------------------------
// Scenario bank: the retrieval corpus. Persisted as JSON-Lines, one record
// per line with fixed key order, so fixture banks diff cleanly.
//
// Single-writer, multi-reader; the bank is read-only during a repair run.
// ---------------------------------------------------------------------------

struct ScenarioRecord {
  std::string scenario_id;
  ScenarioAttributes attributes;
  ScenarioText text;
  std::optional<std::vector<double>> embedding;  // unit norm when present
  std::uint64_t content_hash = 0;
  std::string embedder_fingerprint;  // set alongside embedding

  bool operator==(const ScenarioRecord&) const = default;
};

// Case-insensitive substring check, used for the template-coverage invariant.
inline bool contains_ci(const std::string& haystack, const std::string& needle) {
  auto lower = [](std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
  };
  return lower(haystack).find(lower(needle)) != std::string::npos;
}

// Builds a record from attributes; text defaults to the template rendering.
inline ScenarioRecord make_record(ScenarioAttributes attrs, std::string id = "",
                                  std::optional<ScenarioText> text = std::nullopt) {
  ScenarioRecord rec;
  rec.attributes = normalize(std::move(attrs));
  rec.text = text.has_value() ? std::move(*text) : describe(rec.attributes);
  rec.scenario_id = std::move(id);
  rec.text.scenario_id = rec.scenario_id;
  rec.content_hash = attribute_content_hash(rec.attributes);
  return rec;
}

inline void validate_record(const ScenarioRecord& rec, int line_no = 0) {
  if (rec.text.text.empty()) throw SchemaError(line_no, "text", "must be non-empty");
  if (rec.content_hash != attribute_content_hash(rec.attributes))
    throw SchemaError(line_no, "content_hash", "does not match attributes");
  if (!is_normalized(rec.attributes))
    throw SchemaError(line_no, "attributes", "scene_tags not sorted/deduplicated");
  if (rec.text.provenance == TextProvenance::kTemplate) {
    const std::string& t = rec.text.text;
    if (!contains_ci(t, weather_token(rec.attributes.weather)) ||
        !contains_ci(t, time_token(rec.attributes.time)) ||
        !contains_ci(t, location_surface(rec.attributes.location)))
      throw SchemaError(line_no, "text", "template text missing an attribute surface form");
    for (const auto& tag : rec.attributes.scene_tags)
      if (!contains_ci(t, tag_surface(tag)))
        throw SchemaError(line_no, "text", "template text missing scene tag '" + tag + "'");
  }
  if (rec.embedding.has_value()) {
    double norm = 0.0;
    for (double x : *rec.embedding) norm += x * x;
    norm = std::sqrt(norm);
    if (std::abs(norm - 1.0) > 1e-6)
      throw SchemaError(line_no, "embedding", "L2 norm outside 1 +/- 1e-6");
  }
}

struct IngestReport {
  int added = 0;
  int deduped = 0;
};

class Bank {
 public:
  // Records with a content hash already present are skipped and counted as
  // deduped. Records without an id get "s" + zero-padded sequence numbers.
  IngestReport ingest(std::vector<ScenarioRecord> incoming) {
    IngestReport report;
    for (auto& rec : incoming) {
      if (rec.content_hash == 0) rec.content_hash = attribute_content_hash(rec.attributes);
      validate_record(rec);
      if (by_hash_.count(rec.content_hash) > 0) {
        ++report.deduped;
        continue;
      }
      if (!rec.scenario_id.empty()) {
        auto it = records_.find(rec.scenario_id);
        if (it != records_.end() && it->second.content_hash != rec.content_hash)
          throw DuplicateIdError("id '" + rec.scenario_id + "' exists with different content");
      } else {
        rec.scenario_id = next_auto_id();
        rec.text.scenario_id = rec.scenario_id;
      }
      by_hash_[rec.content_hash] = rec.scenario_id;
      records_[rec.scenario_id] = std::move(rec);
      ++report.added;
    }
    return report;
  }

  const ScenarioRecord& get(const std::string& id) const {
    auto it = records_.find(id);
    if (it == records_.end()) throw NotFoundError("no scenario '" + id + "' in bank");
    return it->second;
  }

  bool contains(const std::string& id) const { return records_.count(id) > 0; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  // Ascending-id iteration; downstream scoring depends on this order.
  const std::map<std::string, ScenarioRecord>& records() const { return records_; }

  std::vector<ScenarioRecord> scan() const {
    std::vector<ScenarioRecord> out;
    out.reserve(records_.size());
    for (const auto& [id, rec] : records_) out.push_back(rec);
    return out;
  }

  void save(const std::string& path) const {
    std::vector<Json> rows;
    rows.reserve(records_.size());
    for (const auto& [id, rec] : records_) rows.push_back(record_to_json(rec));
    save_jsonl(path, rows);
  }

  static Bank load(const std::string& path) {
    Bank bank;
    for_each_jsonl(path, [&](int line_no, const Json& obj) {
      ScenarioRecord rec = record_from_json(obj, line_no);
      validate_record(rec, line_no);
      if (bank.records_.count(rec.scenario_id) > 0)
        throw SchemaError(line_no, "scenario_id", "duplicate id '" + rec.scenario_id + "'");
      bank.by_hash_[rec.content_hash] = rec.scenario_id;
      bank.records_[rec.scenario_id] = std::move(rec);
    });
    return bank;
  }

  // Overwrites an existing record in place (same id and content); used to
  // refresh cached embeddings.
  void replace(const ScenarioRecord& rec) {
    auto it = records_.find(rec.scenario_id);
    if (it == records_.end()) throw NotFoundError("no scenario '" + rec.scenario_id + "' in bank");
    if (it->second.content_hash != rec.content_hash)
      throw DuplicateIdError("replace would change content of '" + rec.scenario_id + "'");
    validate_record(rec);
    it->second = rec;
  }

  bool operator==(const Bank& other) const { return records_ == other.records_; }

  static Json record_to_json(const ScenarioRecord& rec) {
    Json j;
    j["scenario_id"] = rec.scenario_id;
    j["attributes"] = attributes_to_json(rec.attributes);
    j["text"] = rec.text.text;
    j["provenance"] = provenance_token(rec.text.provenance);
    if (rec.embedding.has_value()) j["embedding"] = *rec.embedding;
    j["content_hash"] = hex64(rec.content_hash);
    if (!rec.embedder_fingerprint.empty()) j["embedder_fingerprint"] = rec.embedder_fingerprint;
    return j;
  }

  static ScenarioRecord record_from_json(const Json& obj, int line_no = 0) {
    ScenarioRecord rec;
    rec.scenario_id = require_field<std::string>(obj, "scenario_id", line_no);
    if (!obj.contains("attributes")) throw SchemaError(line_no, "attributes", "missing required field");
    rec.attributes = attributes_from_json(obj.at("attributes"), line_no);
    rec.text.scenario_id = rec.scenario_id;
    rec.text.text = require_field<std::string>(obj, "text", line_no);
    rec.text.provenance =
        provenance_from_token(require_field<std::string>(obj, "provenance", line_no));
    if (obj.contains("embedding"))
      rec.embedding = require_field<std::vector<double>>(obj, "embedding", line_no);
    const std::string hash_hex = require_field<std::string>(obj, "content_hash", line_no);
    try {
      rec.content_hash = std::stoull(hash_hex, nullptr, 16);
    } catch (const std::exception&) {
      throw SchemaError(line_no, "content_hash", "not a hex hash");
    }
    if (obj.contains("embedder_fingerprint"))
      rec.embedder_fingerprint = require_field<std::string>(obj, "embedder_fingerprint", line_no);
    return rec;
  }

 private:
  std::string next_auto_id() const {
    std::uint64_t max_seq = 0;
    for (const auto& [id, rec] : records_) {
      if (id.size() < 2 || id[0] != 's') continue;
      bool digits = true;
      for (std::size_t i = 1; i < id.size(); ++i)
        if (!std::isdigit(static_cast<unsigned char>(id[i]))) { digits = false; break; }
      if (digits)
        max_seq = std::max(max_seq, static_cast<std::uint64_t>(std::stoull(id.substr(1))));
    }
    std::string seq = std::to_string(max_seq + 1);
    while (seq.size() < 4) seq.insert(seq.begin(), '0');
    return "s" + seq;
  }

  std::map<std::string, ScenarioRecord> records_;
  std::map<std::uint64_t, std::string> by_hash_;
};

// Computes or refreshes cached embeddings whose fingerprint is stale.
// Returns the number of records (re)embedded.
inline int ensure_embeddings(Bank& bank, const Embedder& embedder) {
  const std::string fp = embedder.fingerprint();
  int updated = 0;
  std::vector<ScenarioRecord> refreshed;
  for (const auto& [id, rec] : bank.records()) {
    if (rec.embedding.has_value() && rec.embedder_fingerprint == fp) continue;
    ScenarioRecord copy = rec;
    copy.embedding = embedder.embed(copy.text.text);
    copy.embedder_fingerprint = fp;
    refreshed.push_back(std::move(copy));
    ++updated;
  }
  for (auto& rec : refreshed) bank.replace(rec);
  return updated;
}

}  // namespace sera
