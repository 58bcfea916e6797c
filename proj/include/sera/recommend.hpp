#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sera/bank.hpp"
#include "sera/embed.hpp"
#include "sera/errors.hpp"
#include "sera/failure.hpp"
#include "sera/jsonl.hpp"
#include "sera/llm.hpp"

namespace sera {

// ---------------------------------------------------------------------------
// Failure-aware retrieval, reflection and refinement.
//
// A scenario's relevance to a pattern set is the arithmetic mean of its
// similarity to each pattern. Because that objective is additive, the exact
// argmax K-subset is simply the top K individually scored scenarios; ties
// break on ascending scenario id so selection is deterministic.
// ---------------------------------------------------------------------------

constexpr double kDefaultTauCov = 0.25;   // minimum per-pattern coverage
constexpr double kDefaultTauDup = 0.9;    // near-duplicate similarity
constexpr double kPriorityBoost = 0.2;    // r' = r * (1 + boost) when prioritized

struct ScoredCandidate {
  std::string scenario_id;
  double relevance = 0.0;  // mean of per_pattern values
  std::vector<std::pair<std::string, double>> per_pattern;  // (pattern_id, phi)

  bool operator==(const ScoredCandidate&) const = default;
};

struct CandidateSet {
  int k = 0;
  std::vector<ScoredCandidate> members;  // descending relevance, ties by ascending id
};

enum class SuggestionOp { kReplace, kAugment, kPrioritize };

inline const char* suggestion_op_token(SuggestionOp op) {
  switch (op) {
    case SuggestionOp::kReplace: return "replace";
    case SuggestionOp::kAugment: return "augment";
    case SuggestionOp::kPrioritize: return "prioritize";
  }
  return "replace";
}

inline SuggestionOp suggestion_op_from_token(const std::string& s) {
  if (s == "replace") return SuggestionOp::kReplace;
  if (s == "augment") return SuggestionOp::kAugment;
  if (s == "prioritize") return SuggestionOp::kPrioritize;
  throw SchemaError(0, "op", "unknown value '" + s + "'");
}

struct ReflectionSuggestion {
  SuggestionOp op = SuggestionOp::kReplace;
  std::string target_scenario_id;       // replace / prioritize
  std::string replacement_or_added_id;  // replace / augment
  std::string pattern_id;               // augment: the uncovered pattern
  std::string rationale;

  bool operator==(const ReflectionSuggestion&) const = default;
};

struct RefinedMember {
  std::string scenario_id;
  double r_prime = 0.0;
  bool prioritized = false;

  bool operator==(const RefinedMember&) const = default;
};

struct RefinedSet {
  std::vector<RefinedMember> members;        // descending r', ties by ascending id
  std::vector<ReflectionSuggestion> audit;   // suggestions actually applied
};

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

// Accumulating in pattern-id order makes the mean exactly invariant under
// permutations of the pattern set.
inline double mean_in_id_order(const std::vector<std::pair<std::string, double>>& per_pattern) {
  std::vector<std::size_t> order(per_pattern.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return per_pattern[a].first < per_pattern[b].first;
  });
  double sum = 0.0;
  for (std::size_t i : order) sum += per_pattern[i].second;
  return sum / static_cast<double>(per_pattern.size());
}

inline ScoredCandidate score_record(const ScenarioRecord& rec,
                                    const std::vector<FailurePattern>& patterns,
                                    const Embedder& embedder) {
  ScoredCandidate c;
  c.scenario_id = rec.scenario_id;
  for (const auto& p : patterns)
    c.per_pattern.emplace_back(p.pattern_id, embedder.phi(rec.text.text, p.description));
  c.relevance = mean_in_id_order(c.per_pattern);
  return c;
}

// One entry per bank record, in scan (ascending id) order. Cached unit-norm
// embeddings with a matching fingerprint are used directly; anything else is
// embedded on the fly.
inline std::vector<ScoredCandidate> score_bank(const Bank& bank,
                                               const std::vector<FailurePattern>& patterns,
                                               const Embedder& embedder) {
  if (patterns.empty()) throw EmptyPatternSetError("scoring needs at least one pattern");
  std::vector<ScoredCandidate> scored;
  scored.reserve(bank.size());

  if (embedder.backend() == EmbedBackend::kLlmJudge) {
    for (const auto& [id, rec] : bank.records()) scored.push_back(score_record(rec, patterns, embedder));
    return scored;
  }

  const std::string fp = embedder.fingerprint();
  std::vector<std::vector<double>> pattern_vecs;
  pattern_vecs.reserve(patterns.size());
  for (const auto& p : patterns) pattern_vecs.push_back(embedder.embed(p.description));

  for (const auto& [id, rec] : bank.records()) {
    std::vector<double> vec = (rec.embedding.has_value() && rec.embedder_fingerprint == fp)
                                  ? *rec.embedding
                                  : embedder.embed(rec.text.text);
    ScoredCandidate c;
    c.scenario_id = id;
    for (std::size_t pi = 0; pi < patterns.size(); ++pi) {
      double dot = 0.0;
      for (std::size_t i = 0; i < vec.size(); ++i) dot += vec[i] * pattern_vecs[pi][i];
      c.per_pattern.emplace_back(patterns[pi].pattern_id, std::min(1.0, std::max(0.0, dot)));
    }
    c.relevance = mean_in_id_order(c.per_pattern);
    scored.push_back(std::move(c));
  }
  return scored;
}

inline bool candidate_order(const ScoredCandidate& a, const ScoredCandidate& b) {
  if (a.relevance != b.relevance) return a.relevance > b.relevance;
  return a.scenario_id < b.scenario_id;
}

// Top-K by relevance. Exact: the additive subset objective is maximized by
// the K highest individual scores.
inline CandidateSet recommend(const Bank& bank, const std::vector<FailurePattern>& patterns,
                              int k, const Embedder& embedder) {
  if (k < 1) throw ConfigError("K must be >= 1");
  if (bank.empty()) throw EmptyBankError("cannot recommend from an empty bank");
  std::vector<ScoredCandidate> scored = score_bank(bank, patterns, embedder);
  std::sort(scored.begin(), scored.end(), candidate_order);
  CandidateSet out;
  out.k = k;
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  out.members.assign(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take));
  return out;
}

// ---------------------------------------------------------------------------
// Reflection (rule-based)
// ---------------------------------------------------------------------------

inline bool suggestion_order(const ReflectionSuggestion& a, const ReflectionSuggestion& b) {
  if (a.op != b.op) return static_cast<int>(a.op) < static_cast<int>(b.op);
  if (a.target_scenario_id != b.target_scenario_id)
    return a.target_scenario_id < b.target_scenario_id;
  if (a.replacement_or_added_id != b.replacement_or_added_id)
    return a.replacement_or_added_id < b.replacement_or_added_id;
  return a.pattern_id < b.pattern_id;
}

// Deterministic reflection: (a) augment coverage gaps, (b) replace
// near-duplicates, (c) prioritize candidates matching severity-3 patterns.
inline std::vector<ReflectionSuggestion> reflect_rules(
    const CandidateSet& candidates, const std::vector<FailurePattern>& patterns,
    const Bank& bank, const Embedder& embedder, double tau_cov = kDefaultTauCov,
    double tau_dup = kDefaultTauDup) {
  std::vector<ReflectionSuggestion> out;
  std::set<std::string> member_ids;
  for (const auto& m : candidates.members) member_ids.insert(m.scenario_id);

  std::vector<ScoredCandidate> all = score_bank(bank, patterns, embedder);
  std::map<std::string, const ScoredCandidate*> by_id;
  for (const auto& c : all) by_id[c.scenario_id] = &c;

  auto phi_for = [&](const std::string& scenario_id, std::size_t pattern_idx) {
    return by_id.at(scenario_id)->per_pattern[pattern_idx].second;
  };

  // (a) coverage: a pattern nobody in C matches above tau_cov gets the best
  // non-member scenario for it added.
  std::set<std::string> added_ids;
  std::vector<ReflectionSuggestion> augments;
  for (std::size_t pi = 0; pi < patterns.size(); ++pi) {
    double best_member = 0.0;
    for (const auto& m : candidates.members)
      best_member = std::max(best_member, phi_for(m.scenario_id, pi));
    if (best_member >= tau_cov) continue;
    const ScoredCandidate* best = nullptr;
    for (const auto& c : all) {
      if (member_ids.count(c.scenario_id) > 0) continue;
      if (best == nullptr || c.per_pattern[pi].second > best->per_pattern[pi].second ||
          (c.per_pattern[pi].second == best->per_pattern[pi].second &&
           c.scenario_id < best->scenario_id))
        best = &c;
    }
    if (best == nullptr || added_ids.count(best->scenario_id) > 0) continue;
    added_ids.insert(best->scenario_id);
    ReflectionSuggestion s;
    s.op = SuggestionOp::kAugment;
    s.replacement_or_added_id = best->scenario_id;
    s.pattern_id = patterns[pi].pattern_id;
    s.rationale = "pattern '" + patterns[pi].pattern_id + "' uncovered (best member phi " +
                  std::to_string(best_member) + " < tau_cov)";
    augments.push_back(std::move(s));
  }

  // (b) near-duplicates: for each pair above tau_dup, replace the
  // lower-relevance member (ties: the higher id goes).
  std::set<std::string> replace_targets;
  std::set<std::string> used_replacements = added_ids;
  std::vector<ReflectionSuggestion> replaces;
  for (std::size_t i = 0; i < candidates.members.size(); ++i) {
    for (std::size_t j = i + 1; j < candidates.members.size(); ++j) {
      const ScoredCandidate& a = candidates.members[i];
      const ScoredCandidate& b = candidates.members[j];
      double sim = embedder.phi(bank.get(a.scenario_id).text.text,
                                bank.get(b.scenario_id).text.text);
      if (sim < tau_dup) continue;
      const ScoredCandidate* victim = nullptr;
      if (a.relevance != b.relevance)
        victim = a.relevance < b.relevance ? &a : &b;
      else
        victim = a.scenario_id < b.scenario_id ? &b : &a;  // higher id goes
      if (replace_targets.count(victim->scenario_id) > 0) continue;
      const ScoredCandidate* replacement = nullptr;
      for (const auto& c : all) {
        if (member_ids.count(c.scenario_id) > 0 || used_replacements.count(c.scenario_id) > 0)
          continue;
        if (replacement == nullptr || c.relevance > replacement->relevance ||
            (c.relevance == replacement->relevance && c.scenario_id < replacement->scenario_id))
          replacement = &c;
      }
      if (replacement == nullptr) continue;
      replace_targets.insert(victim->scenario_id);
      used_replacements.insert(replacement->scenario_id);
      ReflectionSuggestion s;
      s.op = SuggestionOp::kReplace;
      s.target_scenario_id = victim->scenario_id;
      s.replacement_or_added_id = replacement->scenario_id;
      s.rationale = "near-duplicate of '" +
                    (victim == &a ? b.scenario_id : a.scenario_id) + "' (phi >= tau_dup)";
      replaces.push_back(std::move(s));
    }
  }

  // (c) prioritize members matching a severity-3 pattern, unless they are
  // already scheduled for replacement.
  std::vector<ReflectionSuggestion> priorities;
  for (const auto& m : candidates.members) {
    if (replace_targets.count(m.scenario_id) > 0) continue;
    for (std::size_t pi = 0; pi < patterns.size(); ++pi) {
      if (patterns[pi].severity != 3) continue;
      if (phi_for(m.scenario_id, pi) < tau_cov) continue;
      ReflectionSuggestion s;
      s.op = SuggestionOp::kPrioritize;
      s.target_scenario_id = m.scenario_id;
      s.rationale = "matches severity-3 pattern '" + patterns[pi].pattern_id + "'";
      priorities.push_back(std::move(s));
      break;
    }
  }

  out.insert(out.end(), replaces.begin(), replaces.end());
  out.insert(out.end(), augments.begin(), augments.end());
  out.insert(out.end(), priorities.begin(), priorities.end());
  std::sort(out.begin(), out.end(), suggestion_order);
  return out;
}

// ---------------------------------------------------------------------------
// Reflection (model-backed)
// ---------------------------------------------------------------------------

inline std::string reflect_prompt(const CandidateSet& candidates,
                                  const std::vector<FailurePattern>& patterns,
                                  const Bank& bank) {
  Json cand = Json::array();
  for (const auto& m : candidates.members)
    cand.push_back(Json{{"scenario_id", m.scenario_id},
                        {"relevance", m.relevance},
                        {"text", bank.get(m.scenario_id).text.text}});
  Json pats = Json::array();
  for (const auto& p : patterns) pats.push_back(pattern_to_json(p));
  Json bank_ids = Json::array();
  for (const auto& [id, rec] : bank.records()) bank_ids.push_back(id);
  std::string prompt =
      "You are auditing a candidate set of driving scenarios selected to repair the "
      "failure patterns below. Assess coverage adequacy and diversity, then propose "
      "improvement suggestions: 'replace' a redundant candidate, 'augment' with a bank "
      "scenario covering a missed pattern, or 'prioritize' a candidate matching a "
      "high-risk pattern. Reference only existing ids.\n\nCandidates:\n" +
      cand.dump(2) + "\n\nFailure patterns:\n" + pats.dump(2) +
      "\n\nAvailable bank scenario ids:\n" + bank_ids.dump();
  prompt += schema_instruction_block("reflection.v1");
  prompt += "\nSchema: {\"suggestions\": [{\"op\": \"replace\"|\"augment\"|\"prioritize\", "
            "\"target_scenario_id\"?: string, \"replacement_or_added_id\"?: string, "
            "\"pattern_id\"?: string, \"rationale\": string}]}";
  return prompt;
}

inline std::vector<ReflectionSuggestion> parse_suggestions(
    const Json& doc, const CandidateSet& candidates,
    const std::vector<FailurePattern>& patterns, const Bank& bank) {
  std::set<std::string> member_ids;
  for (const auto& m : candidates.members) member_ids.insert(m.scenario_id);
  std::set<std::string> pattern_ids;
  for (const auto& p : patterns) pattern_ids.insert(p.pattern_id);

  std::vector<ReflectionSuggestion> out;
  std::set<std::pair<int, std::string>> seen;
  for (const Json& sj : doc.at("suggestions")) {
    ReflectionSuggestion s;
    s.op = suggestion_op_from_token(sj.at("op").get<std::string>());
    if (sj.contains("target_scenario_id"))
      s.target_scenario_id = sj.at("target_scenario_id").get<std::string>();
    if (sj.contains("replacement_or_added_id"))
      s.replacement_or_added_id = sj.at("replacement_or_added_id").get<std::string>();
    if (sj.contains("pattern_id")) s.pattern_id = sj.at("pattern_id").get<std::string>();
    s.rationale = sj.value("rationale", "");

    if (s.op == SuggestionOp::kReplace || s.op == SuggestionOp::kPrioritize) {
      if (member_ids.count(s.target_scenario_id) == 0)
        throw MalformedLlmOutputError("suggestion targets '" + s.target_scenario_id +
                                      "' which is not a candidate");
    }
    if (s.op == SuggestionOp::kReplace || s.op == SuggestionOp::kAugment) {
      if (!bank.contains(s.replacement_or_added_id))
        throw MalformedLlmOutputError("suggestion names '" + s.replacement_or_added_id +
                                      "' which is not in the bank");
    }
    if (s.op == SuggestionOp::kAugment && pattern_ids.count(s.pattern_id) == 0)
      throw MalformedLlmOutputError("suggestion names unknown pattern '" + s.pattern_id + "'");

    const std::string target_key =
        s.op == SuggestionOp::kAugment ? s.replacement_or_added_id : s.target_scenario_id;
    if (!seen.insert({static_cast<int>(s.op), target_key}).second)
      throw MalformedLlmOutputError("duplicate suggestion for (op, target) = (" +
                                    std::string(suggestion_op_token(s.op)) + ", " + target_key +
                                    ")");
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<ReflectionSuggestion> reflect_llm(const CandidateSet& candidates,
                                                     const std::vector<FailurePattern>& patterns,
                                                     const Bank& bank, LlmClient& llm) {
  if (candidates.members.empty()) throw EmptyBankError("reflection needs candidates");
  if (patterns.empty()) throw EmptyPatternSetError("reflection needs patterns");
  LlmTask task{LlmTaskKind::kReflect, reflect_prompt(candidates, patterns, bank),
               "reflection.v1"};
  Json doc = llm.complete(task);
  return parse_suggestions(doc, candidates, patterns, bank);
}

// ---------------------------------------------------------------------------
// Refinement: apply suggestions in fixed op order and rescore
// ---------------------------------------------------------------------------

inline RefinedSet refine(const CandidateSet& candidates,
                         const std::vector<ReflectionSuggestion>& suggestions, const Bank& bank,
                         const std::vector<FailurePattern>& patterns, const Embedder& embedder) {
  // A target both replaced and prioritized is contradictory.
  std::set<std::string> replaced, prioritized_targets;
  for (const auto& s : suggestions) {
    if (s.op == SuggestionOp::kReplace) replaced.insert(s.target_scenario_id);
    if (s.op == SuggestionOp::kPrioritize) prioritized_targets.insert(s.target_scenario_id);
  }
  for (const auto& id : replaced)
    if (prioritized_targets.count(id) > 0)
      throw ConflictingSuggestionsError("'" + id + "' is both replaced and prioritized");

  struct Entry {
    double r = 0.0;
    bool prioritized = false;
  };
  std::map<std::string, Entry> members;
  for (const auto& m : candidates.members) members[m.scenario_id] = Entry{m.relevance, false};

  auto relevance_of = [&](const std::string& id) {
    return score_record(bank.get(id), patterns, embedder).relevance;
  };
  auto r_prime = [](const Entry& e) { return e.r * (1.0 + (e.prioritized ? kPriorityBoost : 0.0)); };

  const std::size_t capacity = std::max<std::size_t>(candidates.members.size(),
                                                     static_cast<std::size_t>(candidates.k));
  std::vector<ReflectionSuggestion> applied;

  // replace -> augment -> prioritize; fixed order keeps refinement pure.
  for (const auto& s : suggestions) {
    if (s.op != SuggestionOp::kReplace) continue;
    if (members.count(s.target_scenario_id) == 0) continue;       // already gone
    if (members.count(s.replacement_or_added_id) > 0) continue;   // would duplicate
    if (!bank.contains(s.replacement_or_added_id)) continue;
    members.erase(s.target_scenario_id);
    members[s.replacement_or_added_id] = Entry{relevance_of(s.replacement_or_added_id), false};
    applied.push_back(s);
  }
  for (const auto& s : suggestions) {
    if (s.op != SuggestionOp::kAugment) continue;
    if (members.count(s.replacement_or_added_id) > 0) continue;
    if (!bank.contains(s.replacement_or_added_id)) continue;
    members[s.replacement_or_added_id] = Entry{relevance_of(s.replacement_or_added_id), false};
    applied.push_back(s);
    if (members.size() > capacity) {
      // Evict the lowest-r' member that is not slated for prioritization;
      // among equals the highest id goes. If every member is protected,
      // evict the lowest-r' member overall to keep the size bound.
      auto pick_victim = [&](bool respect_protection) {
        std::string victim;
        double victim_rp = 0.0;
        for (const auto& [id, e] : members) {
          if (respect_protection && prioritized_targets.count(id) > 0) continue;
          const double rp = r_prime(e);
          if (victim.empty() || rp < victim_rp || (rp == victim_rp && id > victim)) {
            victim = id;
            victim_rp = rp;
          }
        }
        return victim;
      };
      std::string victim = pick_victim(true);
      if (victim.empty()) victim = pick_victim(false);
      members.erase(victim);
    }
  }
  for (const auto& s : suggestions) {
    if (s.op != SuggestionOp::kPrioritize) continue;
    auto it = members.find(s.target_scenario_id);
    if (it == members.end()) continue;  // evicted meanwhile
    it->second.prioritized = true;
    applied.push_back(s);
  }

  RefinedSet out;
  out.audit = std::move(applied);
  for (const auto& [id, e] : members)
    out.members.push_back(RefinedMember{id, r_prime(e), e.prioritized});
  std::sort(out.members.begin(), out.members.end(),
            [](const RefinedMember& a, const RefinedMember& b) {
              if (a.r_prime != b.r_prime) return a.r_prime > b.r_prime;
              return a.scenario_id < b.scenario_id;
            });
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline Json candidate_to_json(const ScoredCandidate& c) {
  Json per = Json::array();
  for (const auto& [pid, v] : c.per_pattern)
    per.push_back(Json{{"pattern_id", pid}, {"phi", v}});
  return Json{{"scenario_id", c.scenario_id}, {"relevance", c.relevance}, {"per_pattern", per}};
}

inline ScoredCandidate candidate_from_json(const Json& j, int line_no = 0) {
  ScoredCandidate c;
  c.scenario_id = require_field<std::string>(j, "scenario_id", line_no);
  c.relevance = require_field<double>(j, "relevance", line_no);
  if (j.contains("per_pattern"))
    for (const Json& p : j.at("per_pattern"))
      c.per_pattern.emplace_back(require_field<std::string>(p, "pattern_id", line_no),
                                 require_field<double>(p, "phi", line_no));
  return c;
}

inline Json suggestion_to_json(const ReflectionSuggestion& s) {
  Json j{{"op", suggestion_op_token(s.op)}};
  if (!s.target_scenario_id.empty()) j["target_scenario_id"] = s.target_scenario_id;
  if (!s.replacement_or_added_id.empty()) j["replacement_or_added_id"] = s.replacement_or_added_id;
  if (!s.pattern_id.empty()) j["pattern_id"] = s.pattern_id;
  j["rationale"] = s.rationale;
  return j;
}

inline Json refined_to_json(const RefinedSet& r) {
  Json members = Json::array();
  for (const auto& m : r.members)
    members.push_back(Json{{"scenario_id", m.scenario_id},
                           {"r_prime", m.r_prime},
                           {"prioritized", m.prioritized}});
  Json audit = Json::array();
  for (const auto& s : r.audit) audit.push_back(suggestion_to_json(s));
  return Json{{"members", members}, {"audit", audit}};
}

}  // namespace sera
