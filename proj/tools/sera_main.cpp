// Command-line front end for the scenario-repair pipeline.

#include <cstdio>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sera/sera.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitStageError = 3;

sera::ScenarioRecord record_from_ingest_row(const sera::Json& row, int line_no) {
  if (row.contains("content_hash")) return sera::Bank::record_from_json(row, line_no);
  if (!row.contains("attributes"))
    throw sera::SchemaError(line_no, "attributes", "missing required field");
  sera::ScenarioAttributes attrs = sera::attributes_from_json(row.at("attributes"), line_no);
  std::string id = row.value("scenario_id", "");
  std::optional<sera::ScenarioText> text;
  if (row.contains("text")) {
    sera::ScenarioText t;
    t.text = row.at("text").get<std::string>();
    t.provenance = sera::provenance_from_token(row.value("provenance", "template"));
    text = t;
  }
  return sera::make_record(std::move(attrs), std::move(id), std::move(text));
}

int cmd_bank_ingest(const std::string& input, const std::string& bank_path, bool embed) {
  sera::Bank bank;
  if (std::filesystem::exists(bank_path)) bank = sera::Bank::load(bank_path);
  std::vector<sera::ScenarioRecord> records;
  sera::for_each_jsonl(input, [&](int line_no, const sera::Json& row) {
    records.push_back(record_from_ingest_row(row, line_no));
  });
  sera::IngestReport report = bank.ingest(std::move(records));
  if (embed) {
    sera::Embedder embedder;
    sera::ensure_embeddings(bank, embedder);
  }
  bank.save(bank_path);
  std::cout << "added " << report.added << ", deduped " << report.deduped << ", bank size "
            << bank.size() << "\n";
  return kExitOk;
}

int cmd_bank_list(const std::string& bank_path) {
  sera::Bank bank = sera::Bank::load(bank_path);
  for (const auto& [id, rec] : bank.records()) std::cout << id << "\t" << rec.text.text << "\n";
  return kExitOk;
}

int cmd_bank_stats(const std::string& bank_path) {
  sera::Bank bank = sera::Bank::load(bank_path);
  std::map<std::string, int> weather, time, location;
  int embedded = 0;
  for (const auto& [id, rec] : bank.records()) {
    ++weather[sera::weather_token(rec.attributes.weather)];
    ++time[sera::time_token(rec.attributes.time)];
    ++location[sera::location_token(rec.attributes.location)];
    if (rec.embedding.has_value()) ++embedded;
  }
  std::cout << "records: " << bank.size() << "\nembedded: " << embedded << "\n";
  auto dump = [](const char* name, const std::map<std::string, int>& m) {
    std::cout << name << ":";
    for (const auto& [k, v] : m) std::cout << " " << k << "=" << v;
    std::cout << "\n";
  };
  dump("weather", weather);
  dump("time", time);
  dump("location", location);
  return kExitOk;
}

int cmd_evaluate(const std::string& policy_path, const std::string& routes_path,
                 const std::string& out_path) {
  sera::PolicyParams policy =
      policy_path.empty() ? sera::baseline_policy() : sera::load_policy(policy_path);
  std::vector<sera::Route> routes = sera::load_routes(routes_path);
  sera::PreEvaluation result = sera::pre_evaluate(policy, routes);
  sera::save_logs(out_path, result.logs);
  std::printf("routes %zu | mean driving score %.2f | success rate %.1f%% | infractions %d\n",
              result.logs.size(), result.summary.mean_driving_score,
              100.0 * result.summary.success_rate, result.summary.infraction_count);
  return kExitOk;
}

int cmd_analyze(const std::string& logs_path, const std::string& mode,
                const std::string& scope, const std::string& out_path) {
  std::vector<sera::PerformanceLog> logs = sera::load_logs(logs_path);
  std::unique_ptr<sera::LlmClient> llm;
  if (mode == "llm") llm = std::make_unique<sera::LlmClient>(sera::llm_handle_from_env());

  auto extract = [&](const std::vector<sera::PerformanceLog>& subset) {
    return mode == "llm" ? sera::extract_patterns_llm(subset, *llm)
                         : sera::extract_patterns_rules(subset);
  };

  std::vector<sera::FailurePattern> patterns;
  if (scope == "per_route") {
    for (const auto& log : logs) {
      std::vector<sera::FailurePattern> part = extract({log});
      for (auto& p : part) {
        p.pattern_id = log.route_id + "/" + p.pattern_id;
        patterns.push_back(std::move(p));
      }
    }
  } else {
    patterns = extract(logs);
  }
  sera::save_patterns(out_path, patterns);
  std::cout << "extracted " << patterns.size() << " pattern(s)\n";
  return kExitOk;
}

int cmd_recommend(const std::string& patterns_path, const std::string& bank_path, int k,
                  const std::string& out_path) {
  sera::Bank bank = sera::Bank::load(bank_path);
  std::vector<sera::FailurePattern> patterns = sera::load_patterns(patterns_path);
  sera::Embedder embedder;
  sera::CandidateSet c = sera::recommend(bank, patterns, k, embedder);
  std::vector<sera::Json> rows;
  for (const auto& m : c.members) rows.push_back(sera::candidate_to_json(m));
  if (out_path.empty())
    for (const auto& row : rows) std::cout << row.dump() << "\n";
  else
    sera::save_jsonl(out_path, rows);
  return kExitOk;
}

int cmd_reflect(const std::string& candidates_path, const std::string& patterns_path,
                const std::string& bank_path, const std::string& mode, double tau_cov,
                double tau_dup, const std::string& out_path, const std::string& refine_out) {
  sera::Bank bank = sera::Bank::load(bank_path);
  std::vector<sera::FailurePattern> patterns = sera::load_patterns(patterns_path);
  sera::CandidateSet candidates;
  candidates.k = 0;
  sera::for_each_jsonl(candidates_path, [&](int line_no, const sera::Json& row) {
    candidates.members.push_back(sera::candidate_from_json(row, line_no));
  });
  candidates.k = static_cast<int>(candidates.members.size());

  sera::Embedder embedder;
  std::vector<sera::ReflectionSuggestion> suggestions;
  if (mode == "llm") {
    sera::LlmClient llm(sera::llm_handle_from_env());
    suggestions = sera::reflect_llm(candidates, patterns, bank, llm);
  } else {
    suggestions = sera::reflect_rules(candidates, patterns, bank, embedder, tau_cov, tau_dup);
  }

  std::vector<sera::Json> rows;
  for (const auto& s : suggestions) rows.push_back(sera::suggestion_to_json(s));
  if (out_path.empty())
    for (const auto& row : rows) std::cout << row.dump() << "\n";
  else
    sera::save_jsonl(out_path, rows);

  if (!refine_out.empty()) {
    sera::RefinedSet refined = sera::refine(candidates, suggestions, bank, patterns, embedder);
    sera::write_file(refine_out, sera::refined_to_json(refined).dump(2) + "\n");
  }
  return kExitOk;
}

std::unique_ptr<sera::LlmClient> llm_for(const sera::RepairConfig& cfg) {
  if (cfg.analyzer == sera::AnalyzerMode::kLlm || cfg.reflection == sera::ReflectionMode::kLlm)
    return std::make_unique<sera::LlmClient>(sera::llm_handle_from_env());
  return nullptr;
}

int cmd_repair(const std::string& config_path, const std::string& out_path) {
  sera::RepairConfig cfg = sera::load_repair_config(config_path);
  std::unique_ptr<sera::LlmClient> llm = llm_for(cfg);
  sera::RepairReport report = sera::run_repair(cfg, llm.get());
  sera::save_report(out_path, report);
  std::printf("driving score %.2f -> %.2f | success rate %.1f%% -> %.1f%% | infractions %d -> %d\n",
              report.before.mean_driving_score, report.after.mean_driving_score,
              100.0 * report.before.success_rate, 100.0 * report.after.success_rate,
              report.before.infraction_count, report.after.infraction_count);
  return kExitOk;
}

int cmd_ablation(const std::string& config_path, const std::string& out_path) {
  sera::RepairConfig cfg = sera::load_repair_config(config_path);
  std::unique_ptr<sera::LlmClient> llm = llm_for(cfg);
  std::vector<sera::AblationResult> results = sera::run_ablation(cfg, llm.get());
  std::printf("%-10s %14s %14s %14s %14s\n", "arm", "score before", "score after",
              "success after", "infractions");
  for (const auto& r : results)
    std::printf("%-10s %14.2f %14.2f %13.1f%% %14d\n", r.arm.c_str(),
                r.report.before.mean_driving_score, r.report.after.mean_driving_score,
                100.0 * r.report.after.success_rate, r.report.after.infraction_count);
  if (!out_path.empty()) {
    sera::Json j = sera::Json::array();
    for (const auto& r : results)
      j.push_back(sera::Json{{"arm", r.arm}, {"report", sera::report_to_json(r.report)}});
    sera::write_file(out_path, j.dump(2) + "\n");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Failure-aware scenario recommendation and self-evolving policy repair"};
  app.require_subcommand(1);

  // bank
  auto* bank = app.add_subcommand("bank", "Scenario bank maintenance");
  bank->require_subcommand(1);
  std::string bank_path = "bank.jsonl";
  std::string ingest_file;
  bool ingest_embed = false;
  auto* bank_ingest = bank->add_subcommand("ingest", "Ingest scenario records");
  bank_ingest->add_option("file", ingest_file, "JSONL of scenario records")->required();
  bank_ingest->add_option("--bank", bank_path, "Bank file");
  bank_ingest->add_flag("--embed", ingest_embed, "Compute embeddings for new records");
  auto* bank_list = bank->add_subcommand("list", "List bank records");
  bank_list->add_option("--bank", bank_path, "Bank file");
  auto* bank_stats = bank->add_subcommand("stats", "Bank statistics");
  bank_stats->add_option("--bank", bank_path, "Bank file");

  // evaluate
  std::string policy_path, routes_path, out_path = "logs.jsonl";
  auto* evaluate = app.add_subcommand("evaluate", "Run a policy over routes and write logs");
  evaluate->add_option("--policy", policy_path, "Policy JSON (default: shipped baseline)");
  evaluate->add_option("--routes", routes_path, "Route-set JSONL")->required();
  evaluate->add_option("--out", out_path, "Output log JSONL")->required();

  // analyze
  std::string logs_path, analyze_mode = "rules", analyze_scope = "global",
              patterns_out = "patterns.jsonl";
  auto* analyze = app.add_subcommand("analyze", "Extract failure patterns from logs");
  analyze->add_option("--logs", logs_path, "Performance-log JSONL")->required();
  analyze->add_option("--mode", analyze_mode, "llm|rules")
      ->check(CLI::IsMember({"llm", "rules"}));
  analyze->add_option("--scope", analyze_scope, "global|per_route")
      ->check(CLI::IsMember({"global", "per_route"}));
  analyze->add_option("--out", patterns_out, "Output pattern JSONL");

  // recommend
  std::string patterns_path, rec_bank_path, rec_out;
  int k = 8;
  auto* rec = app.add_subcommand("recommend", "Retrieve top-K scenarios for failure patterns");
  rec->add_option("--patterns", patterns_path, "Pattern JSONL")->required();
  rec->add_option("--bank", rec_bank_path, "Bank file")->required();
  rec->add_option("-K,--top-k", k, "Candidate set size");
  rec->add_option("--out", rec_out, "Output candidate JSONL (default: stdout)");

  // reflect
  std::string refl_candidates, refl_patterns, refl_bank, refl_mode = "rules", refl_out,
              refine_out;
  double tau_cov = sera::kDefaultTauCov, tau_dup = sera::kDefaultTauDup;
  auto* refl = app.add_subcommand("reflect", "Audit a candidate set and suggest improvements");
  refl->add_option("--candidates", refl_candidates, "Candidate JSONL")->required();
  refl->add_option("--patterns", refl_patterns, "Pattern JSONL")->required();
  refl->add_option("--bank", refl_bank, "Bank file")->required();
  refl->add_option("--mode", refl_mode, "llm|rules")->check(CLI::IsMember({"llm", "rules"}));
  refl->add_option("--tau-cov", tau_cov, "Coverage threshold");
  refl->add_option("--tau-dup", tau_dup, "Near-duplicate threshold");
  refl->add_option("--out", refl_out, "Output suggestion JSONL (default: stdout)");
  refl->add_option("--refine-out", refine_out, "Also apply suggestions and write the refined set");

  // repair / ablation
  std::string config_path, report_out = "report.json", ablation_out;
  auto* repair = app.add_subcommand("repair", "Run the full closed-loop repair pipeline");
  repair->add_option("--config", config_path, "Config file")->required();
  repair->add_option("--out", report_out, "Output report JSON");
  auto* ablation = app.add_subcommand("ablation", "Compare random/initial/full selection arms");
  ablation->add_option("--config", config_path, "Config file")->required();
  ablation->add_option("--out", ablation_out, "Optional JSON output with all three reports");

  CLI11_PARSE(app, argc, argv);

  try {
    if (bank_ingest->parsed()) return cmd_bank_ingest(ingest_file, bank_path, ingest_embed);
    if (bank_list->parsed()) return cmd_bank_list(bank_path);
    if (bank_stats->parsed()) return cmd_bank_stats(bank_path);
    if (evaluate->parsed()) return cmd_evaluate(policy_path, routes_path, out_path);
    if (analyze->parsed()) return cmd_analyze(logs_path, analyze_mode, analyze_scope, patterns_out);
    if (rec->parsed()) return cmd_recommend(patterns_path, rec_bank_path, k, rec_out);
    if (refl->parsed())
      return cmd_reflect(refl_candidates, refl_patterns, refl_bank, refl_mode, tau_cov, tau_dup,
                         refl_out, refine_out);
    if (repair->parsed()) return cmd_repair(config_path, report_out);
    if (ablation->parsed()) return cmd_ablation(config_path, ablation_out);
  } catch (const sera::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return kExitConfigError;
  } catch (const sera::Error& e) {
    std::cerr << e.what() << "\n";
    return kExitStageError;
  }
  return kExitOk;
}
